// Maze layouts mirrored from the training side's registry, so plots need
// only a layout name. Characters: 1 wall, 0 open, R spawn, G goal.

export interface Layout {
  name: string;
  rows: number;
  cols: number;
  walls: boolean[][];
  spawn: [number, number];
  goal: [number, number];
  junctions: [number, number][];
}

const MAZE2D_ROWS = [
  "111111111111",
  "100001000001",
  "101101010101",
  "100000010001",
  "101111011101",
  "100101000001",
  "110101010111",
  "1R01000100G1",
  "111111111111",
];

const FOURROOMS_ROWS = [
  "1111111111111",
  "1R00001000001",
  "1000001000001",
  "1000000000001",
  "1000001000001",
  "1101111000001",
  "1000001111011",
  "1000001000001",
  "1000000000001",
  "1000001000001",
  "1000001000001",
  "10000010000G1",
  "1111111111111",
];

const TWO_CORRIDOR_ROWS = [
  "11111111111",
  "11111011111",
  "11111011111",
  "11111011111",
  "11111011111",
  "1R0000000G1",
  "11111011111",
  "11111011111",
  "11111011111",
  "11111011111",
  "11111111111",
];

const REGISTRY: Record<string, string[]> = {
  maze2d_modified: MAZE2D_ROWS,
  gridworld_fourrooms: FOURROOMS_ROWS,
  two_corridor_synthetic: TWO_CORRIDOR_ROWS,
};

export function layoutNames(): string[] {
  return Object.keys(REGISTRY);
}

export function loadLayout(name: string): Layout {
  const rows = REGISTRY[name];
  if (!rows) {
    throw new Error(`unknown layout ${JSON.stringify(name)}; known: ${layoutNames().join(", ")}`);
  }
  const walls: boolean[][] = [];
  let spawn: [number, number] | null = null;
  let goal: [number, number] | null = null;
  for (let r = 0; r < rows.length; r++) {
    const line = rows[r];
    const wallRow: boolean[] = [];
    for (let c = 0; c < line.length; c++) {
      const ch = line[c];
      wallRow.push(ch === "1");
      if (ch === "R") spawn = [r, c];
      if (ch === "G") goal = [r, c];
    }
    walls.push(wallRow);
  }
  if (!spawn || !goal) throw new Error(`layout ${name} is missing R or G`);
  const layout: Layout = {
    name,
    rows: rows.length,
    cols: rows[0].length,
    walls,
    spawn,
    goal,
    junctions: [],
  };
  layout.junctions = findJunctions(layout);
  return layout;
}

// open cells with three or more open 4-neighbours
function findJunctions(layout: Layout): [number, number][] {
  const out: [number, number][] = [];
  for (let r = 0; r < layout.rows; r++) {
    for (let c = 0; c < layout.cols; c++) {
      if (layout.walls[r][c]) continue;
      let open = 0;
      for (const [dr, dc] of [[-1, 0], [1, 0], [0, -1], [0, 1]]) {
        const rr = r + dr;
        const cc = c + dc;
        if (rr >= 0 && rr < layout.rows && cc >= 0 && cc < layout.cols
            && !layout.walls[rr][cc]) {
          open += 1;
        }
      }
      if (open >= 3) out.push([r, c]);
    }
  }
  return out;
}
