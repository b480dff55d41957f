"""Metrics over trained option policies and their transition models.

Dataset-side metrics (switch rate, held-out clone score) run the hindsight
forward pass over logged trajectories chunked into fixed windows, matching
how the policy was trained.  Environment-side metrics execute the policy
call-and-return in a live maze: an option acts until its termination coin
fires, the controller then picks a successor, and every realized
(initiation state, option, first action, terminal state) tuple is scored
under the jumpy transition model.  A trailing option that never terminates
contributes no tuple; an episode without a single realized transition
contributes zero error.

Rollout traces serialize to JSONL with a schema header so the plotting side
needs no imports from here.  Bottleneck alignment scores switch positions
against the layout's junction cells (open cells with three or more open
neighbors); its chance floor is a Monte-Carlo integral over the open area.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special as _sp

from .config import derive_seed, thread_cap
from .envs import MazeLayout, PointmassEnv, junction_cells
from .options import OptionPolicy, forward_pass
from .transition import TransitionModel

TRACE_FORMAT = "mo2lab-traces-1"
_BATCH_ROWS = 64


# ---------------------------------------------------------------------------
# windowed forward passes over logged data
# ---------------------------------------------------------------------------

def _window_batches(episodes, window: int):
    """Non-overlapping windows grouped by length, stacked into small batches.

    Remainders shorter than the window are kept as their own (shorter)
    windows when they still hold two steps, so short episodes are not
    silently dropped from dataset metrics.
    """
    groups: dict[int, list] = {}
    for ep in episodes:
        n = ep.actions.shape[0]
        for t0 in range(0, n, window):
            ln = min(window, n - t0)
            if ln >= 2:
                groups.setdefault(ln, []).append((ep, t0))
    for ln in sorted(groups):
        items = groups[ln]
        for i in range(0, len(items), _BATCH_ROWS):
            part = items[i:i + _BATCH_ROWS]
            s = np.stack([ep.states[t0:t0 + ln] for ep, t0 in part])
            a = np.stack([ep.actions[t0:t0 + ln] for ep, t0 in part])
            yield s, a


def _forward(policy: OptionPolicy, states, actions):
    heads = policy.head_tensors(states, actions, graph=False)
    fwd = forward_pass(heads["log_pl"], heads["beta_logit"], heads["log_pic"])
    return heads, fwd


def average_switch_rate(episodes, policy: OptionPolicy, mode: str = "expectation",
                        window: int = 100,
                        rng: np.random.Generator | None = None) -> float:
    """Mean per-step option termination probability over logged data.

    expectation: mean of the trajectory-conditional switch probability
    beta(s_t | h_t) over all t >= 1.  sampled: draw the lagged option
    posterior and its termination coin at every step and count.  The
    sampled count is an unbiased estimate of the expectation-mode value.
    """
    if mode not in ("expectation", "sampled"):
        raise ValueError(f"unknown switch-rate mode {mode!r}")
    if not episodes:
        raise ValueError("empty dataset")
    if rng is None:
        rng = np.random.default_rng(0)

    total, count = 0.0, 0
    for s, a in _window_batches(episodes, window):
        heads, fwd = _forward(policy, s, a)
        if mode == "expectation":
            total += float(np.sum(fwd.switch_prob))
            count += fwd.switch_prob.size
        else:
            # Gumbel-max draw of o_t ~ pi_H(o_t | h_{t+1}), then its coin
            gumbel = -np.log(-np.log(rng.uniform(size=fwd.log_lagged.shape)))
            o_prev = np.argmax(fwd.log_lagged + gumbel, axis=-1)
            beta = _sp.expit(heads["beta_logit"])
            b, l1 = o_prev.shape
            sel = beta[np.arange(b)[:, None], np.arange(1, l1 + 1)[None, :], o_prev]
            total += float(np.sum(rng.uniform(size=sel.shape) < sel))
            count += sel.size
    rate = total / count
    assert 0.0 <= rate <= 1.0
    return rate


def expected_bc_score(episodes, policy: OptionPolicy, window: int = 100) -> float:
    """Mean marginal action log-likelihood log pi(a_t | h_t), nats per step."""
    if not episodes:
        raise ValueError("empty dataset")
    total, count = 0.0, 0
    for s, a in _window_batches(episodes, window):
        _, fwd = _forward(policy, s, a)
        total += float(np.sum(fwd.action_ll))
        count += fwd.action_ll.size
    return total / count


def switch_mass_by_cell(episodes, policy: OptionPolicy,
                        window: int = 100) -> dict:
    """Expected switch probability binned by the grid cell being entered.

    Walks every window of the dataset once and attributes the step-t
    switch mass to the cell of s_{t+1}, the state whose arrival could have
    triggered the termination coin.  Returns {(row, col): (mean, count)}.
    """
    if not episodes:
        raise ValueError("empty dataset")
    sums: dict = {}
    counts: dict = {}
    for s, a in _window_batches(episodes, window):
        _, fwd = _forward(policy, s, a)
        cells = np.floor(s[:, 1:, :2]).astype(int)
        for b in range(s.shape[0]):
            for t in range(fwd.switch_prob.shape[1]):
                cell = (int(cells[b, t, 1]), int(cells[b, t, 0]))
                sums[cell] = sums.get(cell, 0.0) + float(fwd.switch_prob[b, t])
                counts[cell] = counts.get(cell, 0) + 1
    return {c: (sums[c] / counts[c], counts[c]) for c in sums}


def junction_concentration(mass: dict, layout: MazeLayout) -> dict:
    """Summarize a switch-mass map against the layout's junction cells.

    Means are step-weighted so rarely visited cells cannot dominate.  The
    ratio uses a small floor on the non-junction mean to stay finite when
    the policy never terminates away from a junction.
    """
    if not mass:
        raise ValueError("empty switch-mass map")
    junctions = set(junction_cells(layout))

    def _pooled(cells):
        total = sum(mass[c][0] * mass[c][1] for c in cells)
        steps = sum(mass[c][1] for c in cells)
        return total / steps if steps else 0.0

    inside = [c for c in mass if c in junctions]
    outside = [c for c in mass if c not in junctions]
    junction_mean = _pooled(inside)
    other_mean = _pooled(outside)
    return {
        "junction_mean": junction_mean,
        "other_mean": other_mean,
        "ratio": junction_mean / max(other_mean, 1e-12),
        "argmax_cell": max(mass, key=lambda c: mass[c][0]),
    }


# ---------------------------------------------------------------------------
# call-and-return execution
# ---------------------------------------------------------------------------

@dataclass
class RolloutTrace:
    """One executed episode at option granularity.

    switches records every controller invocation: the forced initial pick
    at t=0 and each later termination, with the position it happened at and
    the incoming option id.
    """

    positions: np.ndarray          # (T+1, 2)
    options: np.ndarray            # (T,) option active during step t
    switches: list = field(default_factory=list)  # {"t", "x", "y", "o"}
    episode_return: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.options = np.asarray(self.options, dtype=np.int64)
        if len(self.options) != len(self.positions) - 1:
            raise ValueError("need exactly one more position than steps")
        times = [ev["t"] for ev in self.switches]
        if times and times[0] != 0:
            raise ValueError("first switch event must sit at t=0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("switch event times must strictly increase")


def run_episode(layout: MazeLayout, policy: OptionPolicy,
                rng: np.random.Generator, horizon: int = 400,
                spawn_cell=None, terminate_on_goal: bool = False,
                stochastic: bool = True):
    """Execute call-and-return; returns (trace, realized option transitions).

    Transitions are (initiation state, option, first executed action,
    terminal state) tuples, one per observed termination.
    """
    env = PointmassEnv(layout, horizon=horizon, terminate_on_goal=terminate_on_goal)
    if spawn_cell is None:
        cells = layout.empty_cells()
        spawn_cell = cells[int(rng.integers(len(cells)))]
    state = env.reset(cell=spawn_cell)

    option = policy.initial_option(state, rng)
    positions = [state.copy()]
    options: list[int] = []
    switches = [{"t": 0, "x": float(state[0]), "y": float(state[1]), "o": option}]
    transitions = []
    init_state, first_action = state.copy(), None
    ret = 0.0

    for t in range(horizon):
        action = policy.act(state, option, rng, stochastic=stochastic)
        executed = np.clip(action, -1.0, 1.0)
        if first_action is None:
            first_action = executed
        state, reward, done = env.step(action)
        ret += reward
        options.append(option)
        positions.append(state.copy())
        if done:
            break
        nxt_option, switched = policy.step_option(state, option, rng)
        if switched:
            transitions.append((init_state, option, first_action, state.copy()))
            switches.append({"t": t + 1, "x": float(state[0]),
                             "y": float(state[1]), "o": nxt_option})
            init_state, first_action = state.copy(), None
        option = nxt_option

    trace = RolloutTrace(np.array(positions), np.array(options), switches, ret)
    return trace, transitions


def _episode_rngs(seed: int, n_episodes: int):
    return [np.random.default_rng(derive_seed(seed, f"rollout-{i}"))
            for i in range(n_episodes)]


def cumulative_prediction_error(layout: MazeLayout, policy: OptionPolicy,
                                model: TransitionModel, n_episodes: int,
                                seed: int = 0, horizon: int = 400,
                                spawn_cell=None,
                                per_episode: bool = False):
    """Mean over episodes of -sum_n log q(s_{n+1} | s_n, o_n, a_n).

    Rollouts spawn at random open cells by default (per-episode derived
    seeds), run a fixed horizon with no goal termination, and score every
    realized option transition under the frozen model.
    """
    if n_episodes < 1:
        raise ValueError("zero completed episodes")

    def one(rng):
        _, transitions = run_episode(layout, policy, rng, horizon=horizon,
                                     spawn_cell=spawn_cell,
                                     terminate_on_goal=False)
        if not transitions:
            return 0.0
        s = np.stack([tr[0] for tr in transitions])
        o = np.array([tr[1] for tr in transitions])
        a = np.stack([tr[2] for tr in transitions])
        f = np.stack([tr[3] for tr in transitions])
        return -float(np.sum(model.log_density(s, o, a, f, graph=False)))

    rngs = _episode_rngs(seed, n_episodes)
    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        values = np.array(list(pool.map(one, rngs)))
    return values if per_episode else float(values.mean())


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------

def export_rollout_traces(layout: MazeLayout, policy: OptionPolicy,
                          n_episodes: int, path, seed: int = 0,
                          horizon: int = 400, spawn_cell=None,
                          terminate_on_goal: bool = False,
                          stochastic: bool = True) -> Path:
    """Write one RolloutTrace JSONL record per episode after a schema header."""
    def one(rng):
        trace, _ = run_episode(layout, policy, rng, horizon=horizon,
                               spawn_cell=spawn_cell,
                               terminate_on_goal=terminate_on_goal,
                               stochastic=stochastic)
        return trace

    rngs = _episode_rngs(seed, n_episodes)
    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        traces = list(pool.map(one, rngs))

    out = Path(path)
    header = {
        "format": TRACE_FORMAT,
        "layout": layout.name,
        "episodes": n_episodes,
        "schema": {"positions": "[[x,y]...]", "options": "[int...]",
                   "switches": "[{t,x,y,o}...]", "return": "f64"},
    }
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for tr in traces:
            rec = {
                "positions": [[float(x), float(y)] for x, y in tr.positions],
                "options": [int(o) for o in tr.options],
                "switches": tr.switches,
                "return": tr.episode_return,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return out


def read_rollout_traces(path) -> list[RolloutTrace]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != TRACE_FORMAT:
            raise ValueError(f"unsupported trace format {header.get('format')!r}")
        traces = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            traces.append(RolloutTrace(
                positions=np.array(rec["positions"], dtype=np.float64),
                options=np.array(rec["options"], dtype=np.int64),
                switches=rec["switches"],
                episode_return=float(rec["return"])))
    if len(traces) != header["episodes"]:
        raise ValueError("trace count does not match header")
    return traces


# ---------------------------------------------------------------------------
# bottleneck alignment
# ---------------------------------------------------------------------------

def bottleneck_alignment(traces, layout: MazeLayout,
                         radius: float = 1.0) -> float | None:
    """Fraction of non-initial switch positions within radius of a junction.

    Returns None when no trace switched after t=0 (undefined, not zero).
    """
    centers = np.array([MazeLayout.center(c) for c in junction_cells(layout)])
    events = [(ev["x"], ev["y"]) for tr in traces
              for ev in tr.switches if ev["t"] > 0]
    if not events:
        return None
    if centers.size == 0:
        return 0.0
    pts = np.array(events)
    dist = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=-1)
    return float(np.mean(dist.min(axis=1) <= radius))


def alignment_chance_floor(layout: MazeLayout, radius: float = 1.0,
                           n_samples: int = 100_000, seed: int = 0) -> float:
    """Alignment of uniformly random open-area positions (MC chance level)."""
    rng = np.random.default_rng(seed)
    cells = np.array(layout.empty_cells(), dtype=np.float64)
    centers = np.array([MazeLayout.center(c) for c in junction_cells(layout)])
    if centers.size == 0:
        return 0.0
    idx = rng.integers(len(cells), size=n_samples)
    # (x, y) uniform within each sampled cell
    pts = cells[idx][:, ::-1] + rng.uniform(size=(n_samples, 2))
    dist = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=-1)
    return float(np.mean(dist.min(axis=1) <= radius))


# ---------------------------------------------------------------------------
# metric reports
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    name: str
    mean: float
    std: float
    n_seeds: int
    reference: float | None = None

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValueError("a report needs at least one seed")
        if self.std < 0:
            raise ValueError("standard deviation cannot be negative")


def metric_report(name: str, values, reference: float | None = None) -> MetricReport:
    arr = np.asarray(values, dtype=np.float64)
    return MetricReport(name=name, mean=float(arr.mean()),
                        std=float(arr.std(ddof=0)), n_seeds=arr.size,
                        reference=reference)


_REPORT_FIELDS = ("name", "mean", "std", "n_seeds", "reference")


def write_metric_reports(path, reports) -> Path:
    out = Path(path)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPORT_FIELDS)
        for r in reports:
            ref = "" if r.reference is None else f"{r.reference:.17g}"
            writer.writerow([r.name, f"{r.mean:.17g}", f"{r.std:.17g}",
                             r.n_seeds, ref])
    return out


def read_metric_reports(path) -> list[MetricReport]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricReport(name=row["name"], mean=float(row["mean"]),
                         std=float(row["std"]), n_seeds=int(row["n_seeds"]),
                         reference=float(row["reference"]) if row["reference"] else None)
            for row in rows]
