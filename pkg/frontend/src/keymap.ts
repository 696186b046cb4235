/** Keyboard -> species assignment: defaults, remapping, browser persistence.
 *
 * Label keys come from one fixed sequence (digits 1-9, then a-z), so up to 35
 * classes get a key automatically. Reserved actions use non-printable keys
 * (Space, Backspace, Enter) and therefore can never collide with label keys.
 * Assignments are kept per project in localStorage and survive reloads.
 */

export const KEY_SEQUENCE: readonly string[] = [
  ..."123456789",
  ..."abcdefghijklmnopqrstuvwxyz",
];

export const RESERVED_KEYS = {
  skip: " ",
  undo: "Backspace",
  submit: "Enter",
} as const;

/** species -> key; iteration order follows the project's class order. */
export type Keymap = Map<string, string>;

export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

/** Lowercase single letters so "A" and "a" act as the same label key. */
export function normalizeKey(key: string): string {
  return key.length === 1 ? key.toLowerCase() : key;
}

export function defaultKeymap(classNames: string[]): Keymap {
  return restoreKeymap(classNames, null);
}

/** Rebuild the keymap from a stored assignment, keeping every stored pair
 *  that is still valid (known species, assignable key, no duplicates) and
 *  filling the remaining classes from the unused keys in sequence order.
 *  Classes beyond the key supply stay unmapped and need a manual remap. */
export function restoreKeymap(
  classNames: string[],
  stored: Record<string, string> | null | undefined,
): Keymap {
  const chosen = new Map<string, string>();
  const taken = new Set<string>();
  if (stored) {
    for (const name of classNames) {
      const key = stored[name];
      if (typeof key === "string" && KEY_SEQUENCE.includes(key) && !taken.has(key)) {
        chosen.set(name, key);
        taken.add(key);
      }
    }
  }
  const free = KEY_SEQUENCE.filter((key) => !taken.has(key));
  let next = 0;
  const map: Keymap = new Map();
  for (const name of classNames) {
    const kept = chosen.get(name);
    if (kept !== undefined) {
      map.set(name, kept);
    } else if (next < free.length) {
      map.set(name, free[next] as string);
      next += 1;
    }
  }
  return map;
}

export function speciesForKey(map: Keymap, key: string): string | null {
  for (const [species, assigned] of map) {
    if (assigned === key) return species;
  }
  return null;
}

export type RemapResult =
  | { ok: true; map: Keymap; swapped: string | null }
  | { ok: false; reason: string };

/** Assign `key` to `species`. If another species already holds the key, the
 *  two swap keys so the map keeps covering every class with unique keys. */
export function remap(map: Keymap, species: string, key: string): RemapResult {
  if (!KEY_SEQUENCE.includes(key)) {
    return { ok: false, reason: `key '${key}' cannot be assigned (use 1-9 or a-z)` };
  }
  const holder = speciesForKey(map, key);
  if (holder === species) {
    return { ok: true, map: new Map(map), swapped: null };
  }
  const previous = map.get(species) ?? null;
  const next: Keymap = new Map(map);
  if (holder !== null) {
    if (previous !== null) {
      next.set(holder, previous);
    } else {
      next.delete(holder);
    }
  }
  next.set(species, key);
  return { ok: true, map: next, swapped: holder };
}

export function keymapStorageKey(projectId: string): string {
  return `camloop:keymap:${projectId}`;
}

export function loadKeymap(
  store: KeyValueStore | null,
  projectId: string,
  classNames: string[],
): Keymap {
  let stored: Record<string, string> | null = null;
  if (store) {
    try {
      const raw = store.getItem(keymapStorageKey(projectId));
      if (raw) {
        const parsed: unknown = JSON.parse(raw);
        if (parsed && typeof parsed === "object" && !Array.isArray(parsed)) {
          stored = {};
          for (const [name, key] of Object.entries(parsed)) {
            if (typeof key === "string") stored[name] = key;
          }
        }
      }
    } catch {
      stored = null; // unreadable storage or corrupt JSON: fall back to defaults
    }
  }
  return restoreKeymap(classNames, stored);
}

export function saveKeymap(store: KeyValueStore | null, projectId: string, map: Keymap): void {
  if (!store) return;
  try {
    store.setItem(keymapStorageKey(projectId), JSON.stringify(Object.fromEntries(map)));
  } catch {
    // Storage may be unavailable (private mode, quota); the in-memory map still works.
  }
}
