// Rollout trace JSONL: one header object, then one record per episode.
// Schema errors carry the 1-based line number of the offending line.

export const TRACE_FORMAT = "mo2lab-traces-1";

export interface SwitchEvent {
  t: number;
  x: number;
  y: number;
  o: number;
}

export interface EpisodeTrace {
  options: number[];
  positions: [number, number][];
  episodeReturn: number;
  switches: SwitchEvent[];
}

export interface TraceFile {
  layout: string;
  episodes: EpisodeTrace[];
}

export class SchemaError extends Error {
  constructor(public source: string, public line: number, detail: string) {
    super(`${source}:${line}: ${detail}`);
    this.name = "SchemaError";
  }
}

function parseLine(source: string, line: number, text: string): unknown {
  try {
    return JSON.parse(text);
  } catch {
    throw new SchemaError(source, line, "not valid JSON");
  }
}

function isNumberPair(v: unknown): v is [number, number] {
  return Array.isArray(v) && v.length === 2
    && typeof v[0] === "number" && typeof v[1] === "number";
}

function asSwitch(source: string, line: number, v: unknown): SwitchEvent {
  const rec = v as Record<string, unknown>;
  for (const key of ["t", "x", "y", "o"]) {
    if (typeof rec?.[key] !== "number") {
      throw new SchemaError(source, line, `switch event missing numeric ${key}`);
    }
  }
  return { t: rec.t as number, x: rec.x as number, y: rec.y as number, o: rec.o as number };
}

export function parseTraceFile(text: string, source = "<trace>"): TraceFile {
  const lines = text.split("\n").filter((l) => l.trim().length > 0);
  if (lines.length === 0) throw new SchemaError(source, 1, "empty trace file");

  const header = parseLine(source, 1, lines[0]) as Record<string, unknown>;
  if (header?.format !== TRACE_FORMAT) {
    throw new SchemaError(source, 1, `format must be ${JSON.stringify(TRACE_FORMAT)}`);
  }
  if (typeof header.layout !== "string") {
    throw new SchemaError(source, 1, "header is missing the layout name");
  }

  const episodes: EpisodeTrace[] = [];
  for (let i = 1; i < lines.length; i++) {
    const n = i + 1;
    const rec = parseLine(source, n, lines[i]) as Record<string, unknown>;
    if (!Array.isArray(rec?.options) || !rec.options.every((v) => typeof v === "number")) {
      throw new SchemaError(source, n, "options must be a number array");
    }
    if (!Array.isArray(rec.positions) || !rec.positions.every(isNumberPair)) {
      throw new SchemaError(source, n, "positions must be [x, y] pairs");
    }
    if (typeof rec.return !== "number") {
      throw new SchemaError(source, n, "return must be a number");
    }
    if (!Array.isArray(rec.switches)) {
      throw new SchemaError(source, n, "switches must be an array");
    }
    episodes.push({
      options: rec.options as number[],
      positions: rec.positions as [number, number][],
      episodeReturn: rec.return,
      switches: rec.switches.map((s) => asSwitch(source, n, s)),
    });
  }
  return { layout: header.layout, episodes };
}
