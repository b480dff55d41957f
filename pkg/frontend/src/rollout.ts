// Figure: maze rollout with the trajectory as a red line and one circle
// per option switch, colored by the option chosen at that switch.

import { Layout } from "./layouts.js";
import { SvgElement, el, points, svgRoot } from "./svg.js";
import { TraceFile } from "./traces.js";

export const OPTION_PALETTE = ["#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];

export interface RolloutStyle {
  cell: number;
  lineWidth: number;
  palette: string[];
  markJunctions: boolean;
}

export const DEFAULT_ROLLOUT_STYLE: RolloutStyle = {
  cell: 40,
  lineWidth: 1.5,
  palette: OPTION_PALETTE,
  markJunctions: false,
};

export function optionColor(option: number, palette: string[] = OPTION_PALETTE): string {
  const idx = ((option % palette.length) + palette.length) % palette.length;
  return palette[idx];
}

export function rolloutSvg(trace: TraceFile, layout: Layout,
                           style: RolloutStyle = DEFAULT_ROLLOUT_STYLE): SvgElement {
  const k = style.cell;
  const width = layout.cols * k;
  const height = layout.rows * k;

  const walls: SvgElement[] = [];
  for (let r = 0; r < layout.rows; r++) {
    for (let c = 0; c < layout.cols; c++) {
      if (layout.walls[r][c]) {
        walls.push(el("rect", {
          x: c * k, y: r * k, width: k, height: k, fill: "#3a3a3a",
        }));
      }
    }
  }

  const junctions: SvgElement[] = style.markJunctions
    ? layout.junctions.map(([r, c]) => el("rect", {
        x: c * k, y: r * k, width: k, height: k,
        fill: "#ffe9a8", "data-junction": `${r},${c}`,
      }))
    : [];

  const trajectories: SvgElement[] = [];
  const switches: SvgElement[] = [];
  trace.episodes.forEach((ep, i) => {
    if (ep.positions.length > 1) {
      trajectories.push(el("polyline", {
        points: points(ep.positions.map(([x, y]) => [x * k, y * k])),
        fill: "none",
        stroke: "#d62728",
        "stroke-width": style.lineWidth,
        "stroke-opacity": 0.6,
        "data-episode": i,
      }));
    }
    for (const sw of ep.switches) {
      switches.push(el("circle", {
        cx: sw.x * k,
        cy: sw.y * k,
        r: k * 0.18,
        fill: optionColor(sw.o, style.palette),
        stroke: "#ffffff",
        "stroke-width": 1,
        "data-option": sw.o,
        "data-t": sw.t,
        "data-episode": i,
      }));
    }
  });

  return svgRoot(width, height, [
    el("rect", { x: 0, y: 0, width, height, fill: "#f5f5f5" }),
    el("g", { id: "junctions" }, junctions),
    el("g", { id: "walls" }, walls),
    el("g", { id: "trajectories" }, trajectories),
    el("g", { id: "switches" }, switches),
  ]);
}
