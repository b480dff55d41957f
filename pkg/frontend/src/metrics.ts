// Metric CSV loading and cross-seed aggregation for learning curves.

import Papa from "papaparse";

export interface Series {
  x: number[];
  y: number[];
}

export interface SeriesGroup {
  label: string;
  runs: Series[];
}

export interface Aggregate {
  x: number[];
  mean: number[];
  std: number[];
  n: number;
}

export function parseMetricsCsv(text: string, xColumn: string,
                                yColumn: string, source = "<csv>"): Series {
  const parsed = Papa.parse<Record<string, unknown>>(text.trim(), {
    header: true,
    dynamicTyping: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`${source}: ${e.message} (row ${e.row})`);
  }
  const fields = parsed.meta.fields ?? [];
  for (const col of [xColumn, yColumn]) {
    if (!fields.includes(col)) {
      throw new Error(`${source}: no column ${JSON.stringify(col)}; has ${fields.join(", ")}`);
    }
  }
  const x: number[] = [];
  const y: number[] = [];
  for (const row of parsed.data) {
    const xv = row[xColumn];
    const yv = row[yColumn];
    if (typeof xv !== "number" || typeof yv !== "number"
        || Number.isNaN(xv) || Number.isNaN(yv)) {
      continue; // e.g. holdout columns logged as nan between evals
    }
    x.push(xv);
    y.push(yv);
  }
  if (x.length === 0) {
    throw new Error(`${source}: no numeric (${xColumn}, ${yColumn}) rows`);
  }
  return { x, y };
}

function interpolate(series: Series, x: number): number | null {
  const xs = series.x;
  if (x < xs[0] || x > xs[xs.length - 1]) return null;
  let i = xs.findIndex((v) => v >= x);
  if (xs[i] === x) return series.y[i];
  const x0 = xs[i - 1];
  const x1 = xs[i];
  const w = (x - x0) / (x1 - x0);
  return series.y[i - 1] * (1 - w) + series.y[i] * w;
}

/** Pool runs at shared x positions; population std (ddof 0).
 *
 * Runs sampled on identical grids aggregate exactly.  Otherwise each run
 * is linearly interpolated onto the union grid and x values outside a
 * run's support are skipped for that run.
 */
export function aggregate(runs: Series[]): Aggregate {
  if (runs.length === 0) throw new Error("no runs to aggregate");
  const sameGrid = runs.every((r) => r.x.length === runs[0].x.length
    && r.x.every((v, i) => v === runs[0].x[i]));
  const grid = sameGrid
    ? runs[0].x
    : [...new Set(runs.flatMap((r) => r.x))].sort((a, b) => a - b);

  const x: number[] = [];
  const mean: number[] = [];
  const std: number[] = [];
  for (let i = 0; i < grid.length; i++) {
    const vals: number[] = [];
    for (const run of runs) {
      const v = sameGrid ? run.y[i] : interpolate(run, grid[i]);
      if (v !== null) vals.push(v);
    }
    if (vals.length === 0) continue;
    const m = vals.reduce((a, b) => a + b, 0) / vals.length;
    const v = vals.reduce((a, b) => a + (b - m) * (b - m), 0) / vals.length;
    x.push(grid[i]);
    mean.push(m);
    std.push(Math.sqrt(v));
  }
  return { x, mean, std, n: runs.length };
}

/** Centered moving average; the window shrinks near the edges. */
export function smooth(values: number[], window: number): number[] {
  if (window <= 1) return values.slice();
  const half = Math.floor(window / 2);
  return values.map((_, i) => {
    const lo = Math.max(0, i - half);
    const hi = Math.min(values.length - 1, i + half);
    let sum = 0;
    for (let j = lo; j <= hi; j++) sum += values[j];
    return sum / (hi - lo + 1);
  });
}
