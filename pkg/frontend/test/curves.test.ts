import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { curvesSvg, DEFAULT_CURVE_STYLE } from "../src/curves.js";
import { parseMetricsCsv } from "../src/metrics.js";
import { render } from "../src/svg.js";

function runsFromFixtures(yColumn: string) {
  return ["fixtures/seed_a.csv", "fixtures/seed_b.csv"].map((p) =>
    parseMetricsCsv(readFileSync(p, "utf8"), "env_steps", yColumn, p));
}

function attr(svg: string, name: string): string {
  const m = svg.match(new RegExp(`${name}="([^"]*)"`));
  expect(m, `attribute ${name}`).not.toBeNull();
  return m![1];
}

function nums(s: string): number[] {
  return s.split(" ").map(Number);
}

describe("curves figure", () => {
  it("band edges equal mean plus and minus one std exactly", () => {
    const svg = render(curvesSvg(
      [{ label: "semi", runs: runsFromFixtures("return") }], "env steps", "return"));
    // fixture returns: (0,2), (1,3), (2,6) -> mean 1,2,4 ; std 1,1,2
    expect(nums(attr(svg, "data-x"))).toEqual([0, 100, 200]);
    expect(nums(attr(svg, "data-mean"))).toEqual([1, 2, 4]);
    expect(nums(attr(svg, "data-lo"))).toEqual([0, 1, 2]);
    expect(nums(attr(svg, "data-hi"))).toEqual([2, 3, 6]);
  });

  it("collapses the band to the line for a single seed", () => {
    const run = parseMetricsCsv(readFileSync("fixtures/seed_a.csv", "utf8"),
                                "env_steps", "v_spawn");
    const svg = render(curvesSvg([{ label: "one", runs: [run] }], "x", "y"));
    expect(attr(svg, "data-lo")).toBe(attr(svg, "data-hi"));
    expect(nums(attr(svg, "data-mean"))).toEqual(run.y);
  });

  it("draws a constant series as a flat line", () => {
    const text = "env_steps,return\n0,0.7\n50,0.7\n100,0.7\n";
    const run = parseMetricsCsv(text, "env_steps", "return");
    const svg = render(curvesSvg([{ label: "flat", runs: [run] }], "x", "y"));
    expect(nums(attr(svg, "data-mean"))).toEqual([0.7, 0.7, 0.7]);
    const pts = attr(svg, "points");
    void pts; // axes come first; the mean polyline is checked by y-equality below
    const polyline = svg.match(/<polyline points="([^"]+)"[^>]*data-mean/)!;
    const ys = polyline[1].split(" ").map((p) => Number(p.split(",")[1]));
    expect(new Set(ys).size).toBe(1);
  });

  it("applies the smoothing window to the mean", () => {
    const text = "env_steps,return\n0,0\n1,3\n2,6\n3,9\n";
    const run = parseMetricsCsv(text, "env_steps", "return");
    const svg = render(curvesSvg([{ label: "s", runs: [run] }], "x", "y",
                                 { ...DEFAULT_CURVE_STYLE, smoothing: 3 }));
    expect(nums(attr(svg, "data-mean"))).toEqual([1.5, 3, 6, 7.5]);
  });

  it("labels both axes", () => {
    const svg = render(curvesSvg(
      [{ label: "semi", runs: runsFromFixtures("return") }],
      "env steps", "episode return"));
    expect(svg).toContain(">env steps</text>");
    expect(svg).toContain(">episode return</text>");
  });

  it("rejects an empty group list", () => {
    expect(() => curvesSvg([], "x", "y")).toThrowError(/no series/);
  });

  it("is deterministic byte for byte", () => {
    const groups = [{ label: "semi", runs: runsFromFixtures("return") }];
    expect(render(curvesSvg(groups, "x", "y")))
      .toBe(render(curvesSvg(groups, "x", "y")));
  });
});
