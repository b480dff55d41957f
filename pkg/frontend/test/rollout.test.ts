import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { loadLayout } from "../src/layouts.js";
import { DEFAULT_ROLLOUT_STYLE, optionColor, rolloutSvg } from "../src/rollout.js";
import { render } from "../src/svg.js";
import { parseTraceFile } from "../src/traces.js";

const GOLDEN = readFileSync("fixtures/golden_traces.jsonl", "utf8");

function circleOptions(svg: string): number[] {
  return [...svg.matchAll(/<circle [^>]*data-option="(\d+)"/g)]
    .map((m) => Number(m[1]));
}

describe("rollout figure", () => {
  it("draws one circle per switch, counted per option", () => {
    const trace = parseTraceFile(GOLDEN, "golden");
    const svg = render(rolloutSvg(trace, loadLayout(trace.layout)));

    // fixture switch counts: option 0 twice, option 1 twice, option 2 once
    const counts = new Map<number, number>();
    for (const o of circleOptions(svg)) {
      counts.set(o, (counts.get(o) ?? 0) + 1);
    }
    expect(counts.get(0)).toBe(2);
    expect(counts.get(1)).toBe(2);
    expect(counts.get(2)).toBe(1);
    expect(counts.get(3)).toBeUndefined();
  });

  it("renders a header-only trace as an empty maze", () => {
    const trace = parseTraceFile(
      '{"format": "mo2lab-traces-1", "layout": "two_corridor_synthetic"}');
    const svg = render(rolloutSvg(trace, loadLayout(trace.layout)));
    expect(circleOptions(svg)).toHaveLength(0);
    expect(svg).toContain('<g id="walls">');
    expect(svg.match(/<polyline/g)).toBeNull();
  });

  it("puts a single-switch trace's circle at the spawn", () => {
    const layout = loadLayout("two_corridor_synthetic");
    const [r, c] = layout.spawn;
    const text = [
      '{"format": "mo2lab-traces-1", "layout": "two_corridor_synthetic"}',
      JSON.stringify({
        options: [3],
        positions: [[c + 0.5, r + 0.5], [c + 0.6, r + 0.5]],
        return: 0,
        switches: [{ t: 0, x: c + 0.5, y: r + 0.5, o: 3 }],
      }),
    ].join("\n");
    const svg = render(rolloutSvg(parseTraceFile(text), layout));
    const circles = [...svg.matchAll(/<circle cx="([^"]+)" cy="([^"]+)"/g)];
    expect(circles).toHaveLength(1);
    const k = DEFAULT_ROLLOUT_STYLE.cell;
    expect(Number(circles[0][1])).toBe((c + 0.5) * k);
    expect(Number(circles[0][2])).toBe((r + 0.5) * k);
  });

  it("colors circles from the option palette, stable across figures", () => {
    expect(optionColor(0)).toBe(optionColor(4));
    expect(optionColor(1)).not.toBe(optionColor(2));
    const trace = parseTraceFile(GOLDEN);
    const svg = render(rolloutSvg(trace, loadLayout(trace.layout)));
    for (const m of svg.matchAll(/fill="([^"]+)"[^>]*data-option="(\d+)"/g)) {
      expect(m[1]).toBe(optionColor(Number(m[2])));
    }
  });

  it("marks junction cells only when asked", () => {
    const trace = parseTraceFile(GOLDEN);
    const layout = loadLayout(trace.layout);
    const plain = render(rolloutSvg(trace, layout));
    const marked = render(rolloutSvg(trace, layout,
                                     { ...DEFAULT_ROLLOUT_STYLE, markJunctions: true }));
    expect(plain).not.toContain("data-junction");
    expect(marked).toContain('data-junction="5,5"');
  });

  it("is deterministic byte for byte", () => {
    const trace = parseTraceFile(GOLDEN);
    const layout = loadLayout(trace.layout);
    expect(render(rolloutSvg(trace, layout)))
      .toBe(render(rolloutSvg(trace, layout)));
  });
});
