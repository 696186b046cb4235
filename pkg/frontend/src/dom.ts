/** Tiny DOM construction helpers for the framework-less UI. */

export type Child = Node | string | null | undefined;

export type Attrs = Record<string, string | boolean | EventListener | null | undefined>;

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Attrs = {},
  ...children: Child[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [name, value] of Object.entries(attrs)) {
    if (value == null || value === false) continue;
    if (typeof value === "function") {
      node.addEventListener(name.replace(/^on/, ""), value);
    } else if (value === true) {
      node.setAttribute(name, "");
    } else {
      node.setAttribute(name, value);
    }
  }
  append(node, children);
  return node;
}

export function append(node: Node, children: Child[]): void {
  for (const child of children) {
    if (child == null) continue;
    node.appendChild(typeof child === "string" ? document.createTextNode(child) : child);
  }
}

export function clear(node: Node): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function pct(value: number): string {
  return `${(100 * value).toFixed(1)}%`;
}

/** Short display form of a crop id (they are long content hashes). */
export function shortId(cropId: string): string {
  return cropId.length > 10 ? `${cropId.slice(0, 10)}…` : cropId;
}
