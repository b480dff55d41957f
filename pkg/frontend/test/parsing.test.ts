import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { loadLayout } from "../src/layouts.js";
import { aggregate, parseMetricsCsv, smooth } from "../src/metrics.js";
import { SchemaError, parseTraceFile } from "../src/traces.js";

const HEADER = '{"format": "mo2lab-traces-1", "layout": "two_corridor_synthetic"}';

describe("trace parsing", () => {
  it("reads the golden fixture", () => {
    const text = readFileSync("fixtures/golden_traces.jsonl", "utf8");
    const file = parseTraceFile(text, "golden");
    expect(file.layout).toBe("two_corridor_synthetic");
    expect(file.episodes).toHaveLength(2);
    expect(file.episodes[0].switches).toHaveLength(3);
    expect(file.episodes[1].episodeReturn).toBe(1.0);
  });

  it("accepts a header-only file as zero episodes", () => {
    expect(parseTraceFile(HEADER).episodes).toHaveLength(0);
  });

  it("rejects a wrong format marker on line 1", () => {
    const bad = '{"format": "something-else", "layout": "x"}';
    expect(() => parseTraceFile(bad, "t.jsonl"))
      .toThrowError(/t\.jsonl:1: format/);
  });

  it("reports the offending line for a corrupt record", () => {
    const text = [
      HEADER,
      '{"options": [0], "positions": [[1, 2]], "return": 0.0, "switches": []}',
      '{"options": "zap"}',
    ].join("\n");
    try {
      parseTraceFile(text, "t.jsonl");
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(SchemaError);
      expect((err as SchemaError).line).toBe(3);
    }
  });

  it("rejects switch events with missing fields", () => {
    const text = [
      HEADER,
      '{"options": [0], "positions": [[1, 2]], "return": 0, "switches": [{"t": 0, "x": 1}]}',
    ].join("\n");
    expect(() => parseTraceFile(text)).toThrowError(/:2: switch event/);
  });
});

describe("layouts", () => {
  it("finds the single crossing of the corridor layout", () => {
    const layout = loadLayout("two_corridor_synthetic");
    expect(layout.junctions).toEqual([[5, 5]]);
    expect(layout.spawn).toEqual([5, 1]);
    expect(layout.goal).toEqual([5, 9]);
  });

  it("finds seven junctions in the modified maze", () => {
    expect(loadLayout("maze2d_modified").junctions).toHaveLength(7);
  });

  it("rejects unknown names", () => {
    expect(() => loadLayout("nope")).toThrowError(/unknown layout/);
  });
});

describe("metrics", () => {
  it("extracts x/y columns with dynamic typing", () => {
    const s = parseMetricsCsv(readFileSync("fixtures/seed_a.csv", "utf8"),
                              "env_steps", "return");
    expect(s.x).toEqual([0, 100, 200]);
    expect(s.y).toEqual([0.0, 1.0, 2.0]);
  });

  it("rejects a missing column by name", () => {
    const text = "a,b\n1,2\n";
    expect(() => parseMetricsCsv(text, "a", "zap", "m.csv"))
      .toThrowError(/m\.csv: no column "zap"/);
  });

  it("skips nan rows the way the offline logs write them", () => {
    const text = "step,holdout\n0,1.5\n10,nan\n20,2.5\n";
    const s = parseMetricsCsv(text, "step", "holdout");
    expect(s.x).toEqual([0, 20]);
    expect(s.y).toEqual([1.5, 2.5]);
  });

  it("aggregates identical grids exactly", () => {
    const a = aggregate([
      { x: [0, 1], y: [1, 2] },
      { x: [0, 1], y: [3, 6] },
    ]);
    expect(a.x).toEqual([0, 1]);
    expect(a.mean).toEqual([2, 4]);
    expect(a.std).toEqual([1, 2]);
  });

  it("interpolates mismatched grids onto the union", () => {
    const a = aggregate([
      { x: [0, 2], y: [0, 2] },
      { x: [1, 3], y: [5, 5] },
    ]);
    // union 0,1,2,3; run 1 contributes 0,1,2; run 2 contributes 1,2,3
    expect(a.x).toEqual([0, 1, 2, 3]);
    expect(a.mean).toEqual([0, 3, 3.5, 5]);
  });

  it("smooths with a shrinking centered window", () => {
    expect(smooth([0, 3, 6, 9], 3)).toEqual([1.5, 3, 6, 7.5]);
    expect(smooth([1, 2, 3], 1)).toEqual([1, 2, 3]);
  });
});
