/** SVG learning-curve chart: accuracy / macro precision / macro recall over
 *  labels used. Values are drawn exactly as the service reports them; every
 *  point carries its raw value in data attributes so the chart can be read
 *  back (and tested) without decoding pixel positions.
 */
import type { CurvePoint } from "./api.js";

export type CurveMetric = "accuracy" | "macro_precision" | "macro_recall";

export interface CurveSeries {
  metric: CurveMetric;
  label: string;
  color: string;
}

export const CURVE_SERIES: readonly CurveSeries[] = [
  { metric: "accuracy", label: "accuracy", color: "#2563eb" },
  { metric: "macro_precision", label: "macro precision", color: "#d97706" },
  { metric: "macro_recall", label: "macro recall", color: "#059669" },
];

const WIDTH = 560;
const HEIGHT = 260;
const MARGIN = { left: 46, right: 14, top: 14, bottom: 34 };
const PLOT_W = WIDTH - MARGIN.left - MARGIN.right;
const PLOT_H = HEIGHT - MARGIN.top - MARGIN.bottom;
const SVG_NS = "http://www.w3.org/2000/svg";

function svgEl(tag: string, attrs: Record<string, string> = {}): SVGElement {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [name, value] of Object.entries(attrs)) {
    node.setAttribute(name, value);
  }
  return node;
}

function clamp01(value: number): number {
  return Math.min(1, Math.max(0, value));
}

/** Indices of up to `limit` ticks spread over n positions, always keeping
 *  the first and the last. */
function tickIndices(n: number, limit: number): number[] {
  if (n <= limit) return Array.from({ length: n }, (_, i) => i);
  const picks = new Set<number>([0, n - 1]);
  for (let k = 1; picks.size < limit && k < limit; k += 1) {
    picks.add(Math.round((k * (n - 1)) / (limit - 1)));
  }
  return [...picks].sort((a, b) => a - b);
}

export function renderCurve(points: CurvePoint[]): SVGSVGElement {
  const svg = svgEl("svg", {
    viewBox: `0 0 ${WIDTH} ${HEIGHT}`,
    class: "curve-chart",
    role: "img",
    "aria-label": "learning curve: accuracy, macro precision, and macro recall vs labels used",
  }) as SVGSVGElement;

  const sorted = [...points].sort((a, b) => a.labels_used - b.labels_used);
  const xs = sorted.map((p) => p.labels_used);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const xPos = (x: number): number =>
    xMax === xMin ? MARGIN.left + PLOT_W / 2 : MARGIN.left + ((x - xMin) / (xMax - xMin)) * PLOT_W;
  const yPos = (y: number): number => MARGIN.top + (1 - clamp01(y)) * PLOT_H;

  // Horizontal grid at 0%, 25%, ..., 100% with axis labels.
  for (let i = 0; i <= 4; i += 1) {
    const frac = i / 4;
    const y = yPos(frac);
    svg.appendChild(
      svgEl("line", {
        x1: String(MARGIN.left),
        x2: String(WIDTH - MARGIN.right),
        y1: String(y),
        y2: String(y),
        class: "curve-grid",
      }),
    );
    const tick = svgEl("text", {
      x: String(MARGIN.left - 6),
      y: String(y + 4),
      "text-anchor": "end",
      class: "curve-tick",
    });
    tick.textContent = `${Math.round(frac * 100)}%`;
    svg.appendChild(tick);
  }

  // X ticks on the observed labels_used values (thinned when dense).
  const distinctX = [...new Set(xs)];
  for (const index of tickIndices(distinctX.length, 8)) {
    const x = distinctX[index] as number;
    const label = svgEl("text", {
      x: String(xPos(x)),
      y: String(HEIGHT - MARGIN.bottom + 18),
      "text-anchor": "middle",
      class: "curve-tick",
    });
    label.textContent = String(x);
    svg.appendChild(label);
  }
  const axis = svgEl("text", {
    x: String(MARGIN.left + PLOT_W / 2),
    y: String(HEIGHT - 4),
    "text-anchor": "middle",
    class: "curve-axis-label",
  });
  axis.textContent = "labels used";
  svg.appendChild(axis);

  for (const series of CURVE_SERIES) {
    if (sorted.length > 1) {
      const coords = sorted
        .map((p) => `${xPos(p.labels_used)},${yPos(p[series.metric])}`)
        .join(" ");
      svg.appendChild(
        svgEl("polyline", {
          points: coords,
          fill: "none",
          stroke: series.color,
          "stroke-width": "2",
          class: "curve-line",
          "data-metric": series.metric,
        }),
      );
    }
    for (const point of sorted) {
      const value = point[series.metric];
      const dot = svgEl("circle", {
        cx: String(xPos(point.labels_used)),
        cy: String(yPos(value)),
        r: "3.5",
        fill: series.color,
        class: "curve-point",
        "data-metric": series.metric,
        "data-labels": String(point.labels_used),
        "data-value": String(value),
      });
      const title = svgEl("title");
      title.textContent = `${series.label} at ${point.labels_used} labels: ${value}`;
      dot.appendChild(title);
      svg.appendChild(dot);
    }
  }

  // Legend along the top edge.
  let legendX = MARGIN.left;
  for (const series of CURVE_SERIES) {
    svg.appendChild(
      svgEl("rect", {
        x: String(legendX),
        y: String(MARGIN.top - 10),
        width: "10",
        height: "10",
        fill: series.color,
        class: "curve-legend-swatch",
      }),
    );
    const text = svgEl("text", {
      x: String(legendX + 14),
      y: String(MARGIN.top - 1),
      class: "curve-legend-label",
    });
    text.textContent = series.label;
    svg.appendChild(text);
    legendX += 14 + 9 * series.label.length + 18;
  }

  return svg;
}
