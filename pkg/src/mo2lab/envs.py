"""Maze environments and offline data generation.

Coordinates: a cell (row r, col c) covers x in [c, c+1) and y in [r, r+1);
the observation exposed to the agent is the continuous (x, y) position.  The
pointmass integrates clipped velocity commands with dt = 0.1 cell units and
resolves wall collisions axis by axis (x first, then y against the updated
x), clamping motion at the wall face.

Offline data comes from a scripted goal-reaching behaviour: sample a random
reachable goal cell, plan a shortest 4-connected waypoint path, follow it
with a noisy PD controller, resample the goal on arrival, and chunk the
continuing stream into fixed-size episodes.  Generation is byte
deterministic per (layout, seed, size).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

WALL, EMPTY = 1, 0
DT = 0.1
GOAL_RADIUS = 0.5
WAYPOINT_RADIUS = 0.25
PD_KP = 10.0
PD_KD = 1.0
EPISODE_CHUNK = 800
HORIZON = 400
_FACE_EPS = 1e-9

# row deltas for (up, right, down, left): the planner's fixed tie-break order
_NEIGHBOR_ORDER = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass
class MazeLayout:
    name: str
    grid: np.ndarray          # (rows, cols) of {0 empty, 1 wall}
    spawn: tuple              # (row, col) of R
    goal: tuple               # (row, col) of G

    @property
    def shape(self):
        return self.grid.shape

    def is_wall(self, cell) -> bool:
        r, c = cell
        if not (0 <= r < self.grid.shape[0] and 0 <= c < self.grid.shape[1]):
            return True
        return self.grid[r, c] == WALL

    def wall_at(self, x: float, y: float) -> bool:
        return self.is_wall((int(np.floor(y)), int(np.floor(x))))

    def empty_cells(self) -> list:
        rows, cols = np.nonzero(self.grid == EMPTY)
        return list(zip(rows.tolist(), cols.tolist()))

    @staticmethod
    def center(cell) -> np.ndarray:
        r, c = cell
        return np.array([c + 0.5, r + 0.5])


_MAZE2D_ROWS = [
    "111111111111",
    "100001000001",
    "101101010101",
    "100000010001",
    "101111011101",
    "100101000001",
    "110101010111",
    "1R01000100G1",
    "111111111111",
]

_FOURROOMS_ROWS = [
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
]

# a horizontal and a vertical corridor crossing at exactly one cell (5, 5);
# every other open cell lies on a straight arm, so (5, 5) is the only place
# where shortest paths between arms change direction
_TWO_CORRIDOR_ROWS = [
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
]


def _parse_rows(name: str, rows: list) -> MazeLayout:
    grid = np.zeros((len(rows), len(rows[0])), dtype=np.int8)
    spawn = goal = None
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "1":
                grid[r, c] = WALL
            elif ch == "R":
                spawn = (r, c)
            elif ch == "G":
                goal = (r, c)
            elif ch != "0":
                raise ValueError(f"bad cell char {ch!r}")
    if spawn is None or goal is None:
        raise ValueError(f"layout {name!r} must mark exactly one R and one G")
    return MazeLayout(name, grid, spawn, goal)


def _reachable_from(layout: MazeLayout, start) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in _NEIGHBOR_ORDER:
            nxt = (r + dr, c + dc)
            if nxt not in seen and not layout.is_wall(nxt):
                seen.add(nxt)
                queue.append(nxt)
    return seen


def validate_layout(layout: MazeLayout) -> MazeLayout:
    grid = layout.grid
    border = np.concatenate([grid[0], grid[-1], grid[:, 0], grid[:, -1]])
    if not np.all(border == WALL):
        raise ValueError("layout border must be solid wall")
    if layout.is_wall(layout.spawn) or layout.is_wall(layout.goal):
        raise ValueError("spawn and goal must be empty cells")
    if layout.goal not in _reachable_from(layout, layout.spawn):
        raise ValueError("goal not reachable from spawn")
    return layout


def load_layout(name: str) -> MazeLayout:
    registry = {
        "maze2d_modified": _MAZE2D_ROWS,
        "gridworld_fourrooms": _FOURROOMS_ROWS,
        "two_corridor_synthetic": _TWO_CORRIDOR_ROWS,
    }
    if name not in registry:
        raise KeyError(f"unknown layout {name!r}; have {sorted(registry)}")
    return validate_layout(_parse_rows(name, registry[name]))


def stretch_layout(layout: MazeLayout, factor: int) -> MazeLayout:
    """Replicate every cell into a factor x factor block (longer corridors).

    The spawn/goal markers stay single cells at the top-left of their blocks.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    grid = np.repeat(np.repeat(layout.grid, factor, axis=0), factor, axis=1)
    scale = lambda cell: (cell[0] * factor, cell[1] * factor)
    out = MazeLayout(f"{layout.name}_x{factor}", grid,
                     scale(layout.spawn), scale(layout.goal))
    return validate_layout(out)


def junction_cells(layout: MazeLayout) -> list:
    """Cells with at least three open neighbors: the corridor intersections."""
    out = []
    for cell in layout.empty_cells():
        r, c = cell
        degree = sum(not layout.is_wall((r + dr, c + dc)) for dr, dc in _NEIGHBOR_ORDER)
        if degree >= 3:
            out.append(cell)
    return out


# ---------------------------------------------------------------------------
# planner
# ---------------------------------------------------------------------------

def plan_waypoints(layout: MazeLayout, start, goal) -> list:
    """Shortest 4-connected cell path by BFS, ties broken (up,right,down,left)."""
    if layout.is_wall(start) or layout.is_wall(goal):
        raise ValueError("start and goal must be empty cells")
    if start == goal:
        return [start]
    parent = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            break
        r, c = cell
        for dr, dc in _NEIGHBOR_ORDER:
            nxt = (r + dr, c + dc)
            if nxt not in parent and not layout.is_wall(nxt):
                parent[nxt] = cell
                queue.append(nxt)
    if goal not in parent:
        raise ValueError(f"no path from {start} to {goal}")
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


# ---------------------------------------------------------------------------
# pointmass dynamics
# ---------------------------------------------------------------------------

def move_point(layout: MazeLayout, pos: np.ndarray, action: np.ndarray,
               dt: float = DT) -> np.ndarray:
    """Integrate one step with axis-separated wall clamping, x first.

    Displacement per step (bounded by dt) never exceeds a cell, so only the
    landing cell needs checking on each axis.
    """
    x, y = float(pos[0]), float(pos[1])
    nx = x + float(action[0]) * dt
    if layout.wall_at(nx, y):
        face = np.floor(nx) + 1.0 if action[0] < 0 else np.floor(nx)
        nx = face + _FACE_EPS if action[0] < 0 else face - _FACE_EPS
    ny = y + float(action[1]) * dt
    if layout.wall_at(nx, ny):
        face = np.floor(ny) + 1.0 if action[1] < 0 else np.floor(ny)
        ny = face + _FACE_EPS if action[1] < 0 else face - _FACE_EPS
    return np.array([nx, ny])


class PointmassEnv:
    """Continuous maze with velocity-command actions and a sparse goal."""

    def __init__(self, layout: MazeLayout, horizon: int = HORIZON,
                 goal_radius: float = GOAL_RADIUS, terminate_on_goal: bool = True):
        self.layout = layout
        self.horizon = horizon
        self.goal_radius = goal_radius
        self.terminate_on_goal = terminate_on_goal
        self._goal_center = MazeLayout.center(layout.goal)
        self.position = MazeLayout.center(layout.spawn)
        self.velocity = np.zeros(2)
        self.t = 0

    def reset(self, cell=None, position=None) -> np.ndarray:
        if position is not None:
            pos = np.asarray(position, dtype=np.float64)
        else:
            pos = MazeLayout.center(self.layout.spawn if cell is None else cell)
        if self.layout.wall_at(pos[0], pos[1]):
            raise ValueError(f"reset position {pos} is inside a wall")
        self.position = pos.copy()
        self.velocity = np.zeros(2)
        self.t = 0
        return self.position.copy()

    def step(self, action) -> tuple:
        """Returns (observation, reward, done)."""
        if self.layout.wall_at(self.position[0], self.position[1]):
            raise ValueError("state is inside a wall")
        act = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        new_pos = move_point(self.layout, self.position, act)
        self.velocity = (new_pos - self.position) / DT
        self.position = new_pos
        self.t += 1
        reached = float(np.linalg.norm(self.position - self._goal_center)) <= self.goal_radius
        reward = 1.0 if reached else 0.0
        done = (reached and self.terminate_on_goal) or self.t >= self.horizon
        return self.position.copy(), reward, done


def behaviour_policy_action(position: np.ndarray, velocity: np.ndarray,
                            waypoint_center: np.ndarray,
                            rng: np.random.Generator | None = None,
                            noise_std: float = 0.1) -> np.ndarray:
    """Noisy PD tracking of the current waypoint, clipped to the action box."""
    a = PD_KP * (waypoint_center - position) - PD_KD * velocity
    if rng is not None and noise_std > 0:
        a = a + rng.normal(0.0, noise_std, size=2)
    return np.clip(a, -1.0, 1.0)


# ---------------------------------------------------------------------------
# discrete twin
# ---------------------------------------------------------------------------

GRID_ACTIONS = ("up", "right", "down", "left", "stay")


def gridworld_step(layout: MazeLayout, cell, action: int):
    """Deterministic one-cell move; bumping a wall stays put."""
    if action == 4:
        return cell
    dr, dc = _NEIGHBOR_ORDER[action]
    nxt = (cell[0] + dr, cell[1] + dc)
    return cell if layout.is_wall(nxt) else nxt


# ---------------------------------------------------------------------------
# offline data generation
# ---------------------------------------------------------------------------

@dataclass
class Episode:
    states: np.ndarray   # (T+1, state_dim)
    actions: np.ndarray  # (T, action_dim)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if len(self.actions) != len(self.states) - 1:
            raise ValueError("episode needs exactly one more state than actions")
        if not (np.isfinite(self.states).all() and np.isfinite(self.actions).all()):
            raise ValueError("episode contains non-finite values")


class _BehaviourStream:
    """The continuing goal-resampling behaviour process on one layout."""

    def __init__(self, layout: MazeLayout, rng: np.random.Generator,
                 noise_std: float = 0.1, goal_cells=None):
        self.layout = layout
        self.rng = rng
        self.noise_std = noise_std
        cells = layout.empty_cells() if goal_cells is None else list(goal_cells)
        if not cells:
            raise ValueError("goal_cells must be nonempty")
        self.cells = cells
        start = cells[rng.integers(len(cells))]
        self.position = MazeLayout.center(start)
        self.velocity = np.zeros(2)
        self.goal_reaches = 0
        self._replan(start)

    def _current_cell(self):
        return (int(np.floor(self.position[1])), int(np.floor(self.position[0])))

    def _replan(self, from_cell):
        goal = self.cells[self.rng.integers(len(self.cells))]
        self.waypoints = [MazeLayout.center(c) for c in
                          plan_waypoints(self.layout, from_cell, goal)]
        self.goal_cell = goal

    def step(self) -> tuple:
        """Advance one step; returns (state_before, clipped_action)."""
        while (len(self.waypoints) > 1
               and np.linalg.norm(self.position - self.waypoints[0]) < WAYPOINT_RADIUS):
            self.waypoints.pop(0)
        if (len(self.waypoints) == 1
                and np.linalg.norm(self.position - self.waypoints[0]) < WAYPOINT_RADIUS):
            self.goal_reaches += 1
            self._replan(self.goal_cell)

        state = self.position.copy()
        action = behaviour_policy_action(
            self.position, self.velocity, self.waypoints[0], self.rng, self.noise_std)
        new_pos = move_point(self.layout, self.position, action)
        self.velocity = (new_pos - self.position) / DT
        self.position = new_pos
        return state, action


def dead_end_cells(layout: MazeLayout) -> list:
    """Cells with exactly one open cardinal neighbor."""
    out = []
    for cell in layout.empty_cells():
        n_open = sum(not layout.is_wall((cell[0] + dr, cell[1] + dc))
                     for dr, dc in _NEIGHBOR_ORDER)
        if n_open == 1:
            out.append(cell)
    return out


def _endpoint_pool(layout: MazeLayout, endpoints, pairs):
    if pairs is None:
        endpoints = dead_end_cells(layout) if endpoints is None else list(endpoints)
        if len(endpoints) < 2:
            raise ValueError("need at least two endpoint cells")
    elif not pairs:
        raise ValueError("pairs must be nonempty when given")
    return endpoints, pairs


def _sample_leg(rng: np.random.Generator, endpoints, pairs):
    if pairs is not None:
        return pairs[int(rng.integers(len(pairs)))]
    i = int(rng.integers(len(endpoints)))
    j = (i + 1 + int(rng.integers(len(endpoints) - 1))) % len(endpoints)
    return endpoints[i], endpoints[j]


def _point_to_point_episode(layout: MazeLayout, rng: np.random.Generator,
                            start, goal, noise_std: float,
                            max_steps: int) -> Episode:
    waypoints = [MazeLayout.center(c) for c in plan_waypoints(layout, start, goal)]
    goal_center = MazeLayout.center(goal)
    pos = MazeLayout.center(start)
    vel = np.zeros(2)
    states, actions = [], []
    for _ in range(max_steps):
        while (len(waypoints) > 1
               and np.linalg.norm(pos - waypoints[0]) < WAYPOINT_RADIUS):
            waypoints.pop(0)
        states.append(pos.copy())
        a = behaviour_policy_action(pos, vel, waypoints[0], rng, noise_std)
        new_pos = move_point(layout, pos, a)
        vel = (new_pos - pos) / DT
        pos = new_pos
        actions.append(a)
        if np.linalg.norm(pos - goal_center) <= GOAL_RADIUS:
            break
    states.append(pos.copy())
    return Episode(np.array(states), np.array(actions),
                   metadata={"start": start, "goal": goal})


def generate_point_to_point_dataset(layout: MazeLayout, seed: int,
                                    n_episodes: int, endpoints=None,
                                    pairs=None, noise_std: float = 0.1,
                                    max_steps: int = HORIZON) -> list:
    """Episodic PD runs between distinct endpoint cells; each stops on arrival.

    Defaults to ordered pairs of the layout's dead ends, so every episode is
    a single pass whose only branching decisions happen at interior
    junctions.  `pairs` restricts to explicit (start, goal) tuples, e.g. to
    make every corridor one-way.
    """
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    endpoints, pairs = _endpoint_pool(layout, endpoints, pairs)
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_episodes):
        start, goal = _sample_leg(rng, endpoints, pairs)
        episodes.append(_point_to_point_episode(layout, rng, start, goal,
                                                noise_std, max_steps))
    return episodes


def generate_point_to_point_budget(layout: MazeLayout, seed: int,
                                   n_transitions: int, endpoints=None,
                                   pairs=None, noise_std: float = 0.1,
                                   max_steps: int = HORIZON) -> list:
    """Point-to-point episodes until their lengths sum to >= n_transitions."""
    if n_transitions < 1:
        raise ValueError("need at least one transition")
    endpoints, pairs = _endpoint_pool(layout, endpoints, pairs)
    rng = np.random.default_rng(seed)
    episodes, total = [], 0
    while total < n_transitions:
        start, goal = _sample_leg(rng, endpoints, pairs)
        ep = _point_to_point_episode(layout, rng, start, goal,
                                     noise_std, max_steps)
        episodes.append(ep)
        total += ep.actions.shape[0]
    return episodes


def generate_offline_dataset(layout: MazeLayout, seed: int, n_transitions: int,
                             noise_std: float = 0.1,
                             chunk: int = EPISODE_CHUNK,
                             goal_cells=None) -> list:
    """Roll the behaviour stream into chunked episodes (sum of lengths = n).

    `goal_cells` restricts where the stream may send the walker; cells off
    every shortest path between goals are then never visited at all.
    """
    if n_transitions < 1:
        raise ValueError("need at least one transition")
    rng = np.random.default_rng(seed)
    stream = _BehaviourStream(layout, rng, noise_std, goal_cells)
    episodes = []
    states, actions = [], []
    for _ in range(n_transitions):
        s, a = stream.step()
        states.append(s)
        actions.append(a)
        if len(actions) == chunk:
            states.append(stream.position.copy())
            episodes.append(Episode(np.array(states), np.array(actions)))
            states, actions = [], []
    if actions:
        states.append(stream.position.copy())
        episodes.append(Episode(np.array(states), np.array(actions)))
    return episodes


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

DATASET_FORMAT = 1


def _fmt_matrix(arr: np.ndarray) -> str:
    rows = (",".join(f"{v:.17g}" for v in row) for row in arr)
    return "[[" + "],[".join(rows) + "]]"


def write_dataset(path, env_id: str, seed: int, episodes: list) -> dict:
    if not episodes:
        raise ValueError("refusing to write an empty dataset")
    header = {
        "format": DATASET_FORMAT,
        "env": env_id,
        "state_dim": int(episodes[0].states.shape[1]),
        "action_dim": int(episodes[0].actions.shape[1]),
        "episodes": len(episodes),
        "seed": int(seed),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True))
        f.write("\n")
        for ep in episodes:
            f.write('{"states":%s,"actions":%s}\n'
                    % (_fmt_matrix(ep.states), _fmt_matrix(ep.actions)))
    return header


def read_dataset(path) -> tuple:
    """Returns (header, list of Episode)."""
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("format") != DATASET_FORMAT:
            raise ValueError(f"unsupported dataset format {header.get('format')!r}")
        episodes = []
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            episodes.append(Episode(np.array(rec["states"]), np.array(rec["actions"])))
    if len(episodes) != header["episodes"]:
        raise ValueError("episode count does not match header")
    return header, episodes
