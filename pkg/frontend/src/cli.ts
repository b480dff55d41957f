#!/usr/bin/env node
// Standalone figure renderer for mo2lab artifacts.
//
//   mo2lab-plot rollout --in traces.jsonl --out fig.svg [--layout NAME]
//                       [--junctions] [--cell PX] [--line-width W]
//   mo2lab-plot curves  --in label=a.csv --in label=b.csv --out fig.svg
//                       [--x COL] [--y COL] [--smooth N]
//                       [--x-label S] [--y-label S]
//
// Inputs are read-only; exit 1 on schema or i/o errors (messages carry
// file and line), exit 2 on bad usage.

import { readFileSync, writeFileSync } from "node:fs";
import { basename } from "node:path";
import { parseArgs } from "node:util";

import { curvesSvg, DEFAULT_CURVE_STYLE } from "./curves.js";
import { loadLayout } from "./layouts.js";
import { SeriesGroup, parseMetricsCsv } from "./metrics.js";
import { DEFAULT_ROLLOUT_STYLE, rolloutSvg } from "./rollout.js";
import { render } from "./svg.js";
import { parseTraceFile } from "./traces.js";

function usage(message: string): never {
  console.error(message);
  console.error("usage: mo2lab-plot rollout|curves --in PATH --out PATH [options]");
  process.exit(2);
}

function runRollout(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      in: { type: "string" },
      out: { type: "string" },
      layout: { type: "string" },
      junctions: { type: "boolean", default: false },
      cell: { type: "string" },
      "line-width": { type: "string" },
    },
  });
  if (!values.in || !values.out) usage("rollout needs --in and --out");

  const trace = parseTraceFile(readFileSync(values.in, "utf8"), values.in);
  const layout = loadLayout(values.layout ?? trace.layout);
  const style = {
    ...DEFAULT_ROLLOUT_STYLE,
    markJunctions: values.junctions ?? false,
    cell: values.cell ? Number(values.cell) : DEFAULT_ROLLOUT_STYLE.cell,
    lineWidth: values["line-width"]
      ? Number(values["line-width"]) : DEFAULT_ROLLOUT_STYLE.lineWidth,
  };
  writeFileSync(values.out, render(rolloutSvg(trace, layout, style)));
  const circles = trace.episodes.reduce((n, ep) => n + ep.switches.length, 0);
  console.log(`${values.out}: ${trace.episodes.length} episodes, ${circles} switch circles`);
}

function splitInput(spec: string): { label: string; path: string } {
  const eq = spec.indexOf("=");
  if (eq > 0) return { label: spec.slice(0, eq), path: spec.slice(eq + 1) };
  return { label: basename(spec).replace(/\.[^.]*$/, ""), path: spec };
}

function runCurves(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      in: { type: "string", multiple: true },
      out: { type: "string" },
      x: { type: "string", default: "env_steps" },
      y: { type: "string", default: "return" },
      smooth: { type: "string" },
      "x-label": { type: "string" },
      "y-label": { type: "string" },
    },
  });
  if (!values.in || values.in.length === 0 || !values.out) {
    usage("curves needs at least one --in and --out");
  }

  const groups = new Map<string, SeriesGroup>();
  for (const spec of values.in) {
    const { label, path } = splitInput(spec);
    const series = parseMetricsCsv(readFileSync(path, "utf8"),
                                   values.x!, values.y!, path);
    if (!groups.has(label)) groups.set(label, { label, runs: [] });
    groups.get(label)!.runs.push(series);
  }
  const style = {
    ...DEFAULT_CURVE_STYLE,
    smoothing: values.smooth ? Math.max(1, Number(values.smooth)) : 1,
  };
  const svg = curvesSvg([...groups.values()],
                        values["x-label"] ?? values.x!,
                        values["y-label"] ?? values.y!, style);
  writeFileSync(values.out, render(svg));
  console.log(`${values.out}: ${groups.size} labels, `
    + `${[...groups.values()].reduce((n, g) => n + g.runs.length, 0)} runs`);
}

export function main(argv: string[]): void {
  const [command, ...rest] = argv;
  try {
    if (command === "rollout") runRollout(rest);
    else if (command === "curves") runCurves(rest);
    else usage(`unknown command ${JSON.stringify(command ?? "")}`);
  } catch (err) {
    if (err && typeof err === "object" && "code" in err
        && (err as { code?: string }).code === "ERR_PARSE_ARGS_UNKNOWN_OPTION") {
      usage(String(err));
    }
    console.error(err instanceof Error ? err.message : String(err));
    process.exit(1);
  }
}

main(process.argv.slice(2));
