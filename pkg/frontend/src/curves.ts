// Figure: mean learning curve per run label with a +-1 standard deviation
// band. The raw aggregated values ride along as data- attributes so tests
// and downstream tools can read the numbers without undoing the pixel
// transform.

import { Aggregate, SeriesGroup, aggregate, smooth } from "./metrics.js";
import { SvgElement, el, points, svgRoot } from "./svg.js";
import { OPTION_PALETTE } from "./rollout.js";

export interface CurveStyle {
  width: number;
  height: number;
  margin: number;
  lineWidth: number;
  smoothing: number;
  palette: string[];
}

export const DEFAULT_CURVE_STYLE: CurveStyle = {
  width: 640,
  height: 420,
  margin: 56,
  lineWidth: 2,
  smoothing: 1,
  palette: OPTION_PALETTE,
};

interface Scale {
  toX(v: number): number;
  toY(v: number): number;
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

function makeScale(aggs: Aggregate[], style: CurveStyle): Scale {
  let xMin = Infinity, xMax = -Infinity, yMin = Infinity, yMax = -Infinity;
  for (const a of aggs) {
    for (let i = 0; i < a.x.length; i++) {
      xMin = Math.min(xMin, a.x[i]);
      xMax = Math.max(xMax, a.x[i]);
      yMin = Math.min(yMin, a.mean[i] - a.std[i]);
      yMax = Math.max(yMax, a.mean[i] + a.std[i]);
    }
  }
  if (xMax === xMin) { xMax = xMin + 1; }
  if (yMax === yMin) { yMax = yMin + 1; }
  const m = style.margin;
  const spanX = style.width - 2 * m;
  const spanY = style.height - 2 * m;
  return {
    toX: (v) => m + ((v - xMin) / (xMax - xMin)) * spanX,
    toY: (v) => style.height - m - ((v - yMin) / (yMax - yMin)) * spanY,
    xMin, xMax, yMin, yMax,
  };
}

function axis(scale: Scale, style: CurveStyle, xLabel: string,
              yLabel: string): SvgElement {
  const m = style.margin;
  const w = style.width;
  const h = style.height;
  const fmt = (v: number) => Number(v.toPrecision(4)).toString();
  return el("g", { id: "axes", "font-family": "sans-serif", "font-size": 12 }, [
    el("line", { x1: m, y1: h - m, x2: w - m, y2: h - m, stroke: "#333" }),
    el("line", { x1: m, y1: m, x2: m, y2: h - m, stroke: "#333" }),
    el("text", { x: m, y: h - m + 16, "text-anchor": "middle" }, [], fmt(scale.xMin)),
    el("text", { x: w - m, y: h - m + 16, "text-anchor": "middle" }, [], fmt(scale.xMax)),
    el("text", { x: m - 6, y: h - m + 4, "text-anchor": "end" }, [], fmt(scale.yMin)),
    el("text", { x: m - 6, y: m + 4, "text-anchor": "end" }, [], fmt(scale.yMax)),
    el("text", { x: w / 2, y: h - 12, "text-anchor": "middle" }, [], xLabel),
    el("text", {
      x: 14, y: h / 2, "text-anchor": "middle",
      transform: `rotate(-90 14 ${h / 2})`,
    }, [], yLabel),
  ]);
}

export function curvesSvg(groups: SeriesGroup[], xLabel: string, yLabel: string,
                          style: CurveStyle = DEFAULT_CURVE_STYLE): SvgElement {
  if (groups.length === 0) throw new Error("no series groups to plot");
  const aggs = groups.map((g) => {
    const a = aggregate(g.runs);
    return {
      x: a.x,
      mean: smooth(a.mean, style.smoothing),
      std: smooth(a.std, style.smoothing),
      n: a.n,
    };
  });
  const scale = makeScale(aggs, style);

  const layers: SvgElement[] = [];
  aggs.forEach((a, gi) => {
    const color = style.palette[gi % style.palette.length];
    const lo = a.x.map((_, i) => a.mean[i] - a.std[i]);
    const hi = a.x.map((_, i) => a.mean[i] + a.std[i]);
    const bandPts: [number, number][] = [
      ...a.x.map((x, i) => [scale.toX(x), scale.toY(hi[i])] as [number, number]),
      ...[...a.x].reverse().map((x, i) => {
        const j = a.x.length - 1 - i;
        return [scale.toX(x), scale.toY(lo[j])] as [number, number];
      }),
    ];
    const label = groups[gi].label;
    layers.push(el("g", { id: `series-${label}` }, [
      el("polygon", {
        points: points(bandPts),
        fill: color,
        "fill-opacity": 0.18,
        stroke: "none",
        "data-label": label,
        "data-x": a.x.join(" "),
        "data-lo": lo.join(" "),
        "data-hi": hi.join(" "),
      }),
      el("polyline", {
        points: points(a.x.map((x, i) => [scale.toX(x), scale.toY(a.mean[i])] as [number, number])),
        fill: "none",
        stroke: color,
        "stroke-width": style.lineWidth,
        "data-label": label,
        "data-mean": a.mean.join(" "),
        "data-n": a.n,
      }),
      el("text", {
        x: scale.toX(a.x[a.x.length - 1]) + 4,
        y: scale.toY(a.mean[a.mean.length - 1]),
        fill: color,
        "font-family": "sans-serif",
        "font-size": 12,
      }, [], label),
    ]));
  });

  return svgRoot(style.width, style.height, [
    el("rect", {
      x: 0, y: 0, width: style.width, height: style.height, fill: "#ffffff",
    }),
    axis(scale, style, xLabel, yLabel),
    el("g", { id: "curves" }, layers),
  ]);
}
