"""Online transfer over frozen options on the sparse goal task.

The offline low-level and termination networks execute call-and-return; a
freshly initialized categorical controller and Q(s, o) critic learn from
replayed experience.  Replay tuples come in two shapes: per-step MDP tuples
(s, o, r, s') and semi-MDP tuples (s, o, g, s'', k) that jump from an
option's initiation to its termination with the discounted in-option return
g.  TD(0) bootstraps through the controller-weighted target value
V(x) = sum_o pi_C(o|x) Q_target(x, o), so duration-k semi tuples discount by
gamma^k and k=1 reduces exactly to the MDP shape.

Controller improvement is a categorical E/M step: a non-parametric target
q(o|s) proportional to pi_C(o|s) exp(Q(s,o)/eta) with eta solved per batch
against a KL budget, then a weighted cross-entropy fit under a trust-region
cap.  An epsilon-greedy Q-learning fallback replaces the controller when
`transfer.epsilon_greedy` is set.

The actor and learner can run as two threads sharing only the replay
buffer; the synchronous mode interleaves them deterministically and is what
tests and the acceptance runs use.
"""

from __future__ import annotations

import csv
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize as _opt
from scipy import special as _sp

from . import autodiff as ad
from . import nets
from .config import RunConfig, derive_seed
from .envs import HORIZON, MazeLayout, PointmassEnv
from .options import OptionPolicy

# rewards live in {0, 1} and the episode ends on goal, so true values sit in
# [0, 1]; estimates outside this band by more than the slack are divergence
Q_ALARM_SLACK = 0.05


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass
class ReplayTuple:
    """One unit of experience; mode picks which tail fields are real."""

    mode: str
    s: np.ndarray
    o: int
    r: float | None = None       # mdp: one-step reward
    s_next: np.ndarray | None = None
    g: float | None = None       # semi: discounted in-option return
    s_term: np.ndarray | None = None
    k: int | None = None         # semi: option duration in env steps
    terminal: bool = False

    def __post_init__(self):
        if self.mode == "mdp":
            if self.r is None or self.s_next is None:
                raise ValueError("mdp tuple needs r and s_next")
        elif self.mode == "semi":
            if self.g is None or self.s_term is None or self.k is None:
                raise ValueError("semi tuple needs g, s_term and k")
            if self.k < 1:
                raise ValueError("option duration k must be at least 1")
        else:
            raise ValueError(f"unknown tuple mode {self.mode!r}")


def accumulate_semi_tuple(s, o: int, rewards, s_term, gamma: float = 0.99,
                          terminal: bool = False) -> ReplayTuple:
    """Fold one full option execution into a semi tuple.

    rewards[i] is the reward after the option's (i+1)-th action, so
    g = sum_i gamma^i rewards[i] with k = len(rewards) terms.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    k = rewards.size
    if k < 1:
        raise ValueError("empty trajectory slice")
    g = float(rewards @ (gamma ** np.arange(k)))
    return ReplayTuple(mode="semi", s=np.asarray(s, dtype=np.float64), o=int(o),
                       g=g, s_term=np.asarray(s_term, dtype=np.float64),
                       k=int(k), terminal=terminal)


class ReplayBuffer:
    """FIFO at capacity; uniform sampling; append/sample are lock-exclusive."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self._items: deque = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def append(self, item: ReplayTuple) -> None:
        with self._lock:
            self._items.append(item)

    def sample(self, rng: np.random.Generator, batch: int) -> list[ReplayTuple]:
        with self._lock:
            if not self._items:
                raise ValueError("cannot sample from an empty buffer")
            idx = rng.integers(len(self._items), size=batch)
            return [self._items[i] for i in idx]


# ---------------------------------------------------------------------------
# controller-critic pair
# ---------------------------------------------------------------------------

class ControllerCritic:
    """Q network, its periodically synced target copy, and the controller."""

    def __init__(self, state_dim: int, n_options: int, hidden=(64, 64),
                 seed: int = 0, replay_capacity: int = 100_000,
                 greedy: bool = False):
        rng = np.random.default_rng(seed)
        self.n_options = n_options
        self.greedy = greedy
        self.q = nets.Mlp((state_dim, *hidden, n_options), rng,
                          name="q", out_scale=0.1)
        self.q_target = nets.Mlp((state_dim, *hidden, n_options), rng,
                                 name="q", out_scale=0.1)
        self.ctrl = nets.Mlp((state_dim, *hidden, n_options), rng,
                             name="tctrl", out_scale=0.1)
        self.sync_target()
        self.buffer = ReplayBuffer(replay_capacity)
        self.adam_q = nets.adam_init(self.q.params())
        self.adam_ctrl = nets.adam_init(self.ctrl.params())
        self.updates = 0

    def sync_target(self) -> None:
        self.q_target.load_state_arrays(self.q.state_arrays())

    def pi_log_probs(self, states: np.ndarray) -> np.ndarray:
        logits = self.ctrl.infer(states)
        return logits - _sp.logsumexp(logits, axis=-1, keepdims=True)

    def v_bar(self, states: np.ndarray) -> np.ndarray:
        """Controller-weighted target value; greedy mode takes the max."""
        qt = self.q_target.infer(states)
        if self.greedy:
            return qt.max(axis=-1)
        return np.sum(np.exp(self.pi_log_probs(states)) * qt, axis=-1)


def td0_update(critic: ControllerCritic, batch: list[ReplayTuple], mode: str,
               gamma: float, lr: float = 1e-3,
               max_norm: float = 10.0) -> tuple[float, dict]:
    """One TD(0) step on Q; returns (loss, info with the divergence alarm)."""
    if any(t.mode != mode for t in batch):
        raise ValueError("mixed-mode batch")
    if not batch:
        raise ValueError("empty batch")

    s = np.stack([t.s for t in batch])
    o = np.array([t.o for t in batch])
    cont = np.array([0.0 if t.terminal else 1.0 for t in batch])
    if mode == "mdp":
        imm = np.array([t.r for t in batch])
        nxt = np.stack([t.s_next for t in batch])
        k = np.ones(len(batch))
    else:
        imm = np.array([t.g for t in batch])
        nxt = np.stack([t.s_term for t in batch])
        k = np.array([t.k for t in batch], dtype=np.float64)
    target = imm + gamma ** k * critic.v_bar(nxt) * cont

    qs = critic.q(s)
    picked = ad.getitem(qs, (np.arange(len(batch)), o))
    err = ad.sub(picked, target)
    loss = ad.mean_(ad.mul(err, err))
    loss.backward()
    nets.apply_gradients(critic.q.params(), critic.adam_q, lr, max_norm=max_norm)
    critic.updates += 1

    q_all = qs.value
    lo, hi = -Q_ALARM_SLACK, 1.0 + Q_ALARM_SLACK
    info = {
        "target_min": float(target.min()), "target_max": float(target.max()),
        "q_min": float(q_all.min()), "q_max": float(q_all.max()),
        "alarm": bool(q_all.min() < lo or q_all.max() > hi),
    }
    return float(loss.value), info


def td0_targets(critic: ControllerCritic, batch: list[ReplayTuple], mode: str,
                gamma: float) -> np.ndarray:
    """The bootstrap targets alone (used by equivalence checks)."""
    if any(t.mode != mode for t in batch):
        raise ValueError("mixed-mode batch")
    cont = np.array([0.0 if t.terminal else 1.0 for t in batch])
    if mode == "mdp":
        imm = np.array([t.r for t in batch])
        nxt = np.stack([t.s_next for t in batch])
        k = np.ones(len(batch))
    else:
        imm = np.array([t.g for t in batch])
        nxt = np.stack([t.s_term for t in batch])
        k = np.array([t.k for t in batch], dtype=np.float64)
    return imm + gamma ** k * critic.v_bar(nxt) * cont


# ---------------------------------------------------------------------------
# controller improvement
# ---------------------------------------------------------------------------

def improve_controller(critic: ControllerCritic, states: np.ndarray,
                       kl_budget: float = 1.0, kl_cap: float = 1.0,
                       lr: float = 1e-3, steps: int = 50) -> dict:
    """Categorical E/M improvement of pi_C toward exp(Q/eta)-weighted targets.

    The temperature eta solves the standard dual for an expected-KL budget
    on the batch; the M step is a weighted cross-entropy fit stopped when
    KL(old || new) reaches the trust-region cap.  A dual solution pinned at
    the search boundary is reported as degenerate (and is harmless: with a
    constant advantage the target equals the current controller at any eta).
    """
    states = np.asarray(states, dtype=np.float64)
    q_vals = critic.q.infer(states)

    # one forward implementation throughout, so a constant advantage makes
    # the target bitwise equal to the controller and the M step a no-op
    def log_probs() -> np.ndarray:
        return ad.log_softmax(critic.ctrl(states), axis=-1).value

    logp_old = log_probs()
    # the target is invariant to per-state advantage shifts; subtracting the
    # row max keeps exp(Q/eta) finite at small eta and makes a constant
    # advantage an exact no-op
    adv = q_vals - q_vals.max(axis=-1, keepdims=True)

    def dual(log_eta: float) -> float:
        eta = float(np.exp(log_eta))
        return eta * kl_budget + eta * float(
            np.mean(_sp.logsumexp(logp_old + adv / eta, axis=-1)))

    lo, hi = np.log(1e-3), np.log(1e3)
    res = _opt.minimize_scalar(dual, bounds=(lo, hi), method="bounded")
    eta = float(np.exp(res.x))
    # the bounded solver stops within its xatol of a pinned boundary
    degenerate = (not res.success) or res.x <= lo + 1e-4 or res.x >= hi - 1e-4

    logits = logp_old + adv / eta
    weights = np.exp(logits - _sp.logsumexp(logits, axis=-1, keepdims=True))

    kl = 0.0
    taken = 0
    params = critic.ctrl.params()
    for _ in range(steps):
        out = ad.log_softmax(critic.ctrl(states), axis=-1)
        loss = ad.neg(ad.mean_(ad.sum_(ad.mul(weights, out), axis=-1)))
        loss.backward()
        norm = np.sqrt(sum(float((p.grad * p.grad).sum())
                           for p in params if p.grad is not None))
        if norm < 1e-9:
            # converged fit; stepping on float noise would let Adam's
            # normalization blow it up to learning-rate-sized updates
            ad.zero_grads(params)
            break
        nets.apply_gradients(params, critic.adam_ctrl, lr)
        taken += 1
        logp_new = log_probs()
        kl = float(np.mean(np.sum(np.exp(logp_old) * (logp_old - logp_new), axis=-1)))
        if kl >= kl_cap:
            break
    return {"eta": eta, "kl": kl, "degenerate": degenerate, "steps": taken}


# ---------------------------------------------------------------------------
# acting
# ---------------------------------------------------------------------------

@dataclass
class ActiveOption:
    """Call-and-return carry: the option currently executing, if any."""

    option: int | None = None


def act_call_and_return(state: np.ndarray, critic: ControllerCritic,
                        options: OptionPolicy, carried: ActiveOption,
                        rng: np.random.Generator, evaluation: bool = False,
                        epsilon: float = 0.0):
    """One acting step; returns (action, carried', {"option", "switched"}).

    The incumbent option's termination coin is flipped on entering `state`;
    on a switch the transfer controller picks the successor (argmax with
    lowest-index tie-break in evaluation, sampled otherwise) and the frozen
    low-level head emits the action (mean action in evaluation).
    """
    option = carried.option
    switched = False
    if option is not None and rng.uniform() < options.termination_prob(state, option):
        option = None
    if option is None:
        switched = True
        if critic.greedy:
            qs = critic.q.infer(state[None, :])[0]
            if not evaluation and epsilon > 0 and rng.uniform() < epsilon:
                option = int(rng.integers(critic.n_options))
            else:
                option = int(np.argmax(qs))
        else:
            logp = critic.pi_log_probs(state[None, :])[0]
            if evaluation:
                option = int(np.argmax(logp))
            else:
                option = int(rng.choice(critic.n_options, p=np.exp(logp)))
    action = options.act(state, option, rng, stochastic=not evaluation)
    return action, ActiveOption(option), {"option": option, "switched": switched}


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

ROW_FIELDS = ("episode", "env_steps", "return", "switches", "v_spawn", "mode")
EVAL_FIELDS = ("episode", "env_steps", "success_rate", "mean_return")


@dataclass
class TransferArtifacts:
    rows: list
    evals: list
    critic: ControllerCritic
    env_steps: int
    grad_steps: int
    alarm_batches: int
    rows_path: Path | None = None
    evals_path: Path | None = None


@dataclass
class _Segment:
    s: np.ndarray
    o: int
    rewards: list = field(default_factory=list)


def _run_eval_block(layout: MazeLayout, critic: ControllerCritic,
                    options: OptionPolicy, cfg: RunConfig, tag: str) -> dict:
    tc = cfg.transfer
    successes, returns = 0, []
    for j in range(tc.eval_episodes):
        rng = np.random.default_rng(derive_seed(cfg.seed, f"transfer-eval-{tag}-{j}"))
        env = PointmassEnv(layout, horizon=HORIZON, terminate_on_goal=True)
        state = env.reset()
        carried = ActiveOption(None)
        ret = 0.0
        for _ in range(HORIZON):
            action, carried, _ = act_call_and_return(
                state, critic, options, carried, rng, evaluation=True)
            state, r, done = env.step(action)
            ret += r
            if done:
                break
        returns.append(ret)
        successes += ret > 0.5
    return {"success_rate": successes / tc.eval_episodes,
            "mean_return": float(np.mean(returns))}


def train_transfer(layout: MazeLayout, options: OptionPolicy, cfg: RunConfig,
                   out_dir=None) -> TransferArtifacts:
    """Run the online stage; emits per-episode rows and periodic evaluations."""
    tc = cfg.transfer
    spawn_obs = MazeLayout.center(layout.spawn)
    critic = ControllerCritic(
        state_dim=spawn_obs.size, n_options=options.cfg.n_options,
        hidden=tc.hidden, seed=derive_seed(cfg.seed, "transfer-init"),
        replay_capacity=tc.replay_capacity, greedy=tc.epsilon_greedy > 0)

    rng_act = np.random.default_rng(derive_seed(cfg.seed, "transfer-act"))
    rng_learn = np.random.default_rng(derive_seed(cfg.seed, "transfer-learn"))

    state_box = {"env_steps": 0, "grad_steps": 0, "alarms": 0, "stop": False}
    learn_lock = threading.Lock()

    def can_update() -> bool:
        return (state_box["grad_steps"] < state_box["env_steps"] // tc.steps_per_gradient
                and len(critic.buffer) >= tc.warmup_tuples)

    def one_update() -> None:
        batch = critic.buffer.sample(rng_learn, tc.batch_size)
        _, info = td0_update(critic, batch, tc.mode, tc.gamma,
                             lr=tc.learning_rate)
        state_box["grad_steps"] += 1
        state_box["alarms"] += info["alarm"]
        if critic.updates % tc.target_period == 0:
            critic.sync_target()

    def learner_thread() -> None:
        while True:
            with learn_lock:
                if can_update():
                    one_update()
                    continue
                if state_box["stop"]:
                    return
            time.sleep(1e-3)

    thread = None
    if not tc.sync:
        thread = threading.Thread(target=learner_thread, daemon=True)
        thread.start()

    rows: list[dict] = []
    evals: list[dict] = []
    for episode in range(tc.episodes):
        if state_box["env_steps"] >= tc.max_env_steps:
            break
        env = PointmassEnv(layout, horizon=HORIZON, terminate_on_goal=True)
        state = env.reset()
        carried = ActiveOption(None)
        segment: _Segment | None = None
        ret, switches = 0.0, 0

        for _ in range(HORIZON):
            action, carried, info = act_call_and_return(
                state, critic, options, carried, rng_act,
                epsilon=tc.epsilon_greedy)
            if info["switched"]:
                switches += 1
                if segment is not None and segment.rewards and tc.mode == "semi":
                    critic.buffer.append(accumulate_semi_tuple(
                        segment.s, segment.o, segment.rewards, state,
                        gamma=tc.gamma, terminal=False))
                segment = _Segment(state.copy(), info["option"])
            nxt, r, done = env.step(action)
            segment.rewards.append(r)
            if tc.mode == "mdp":
                critic.buffer.append(ReplayTuple(
                    mode="mdp", s=state.copy(), o=info["option"], r=r,
                    s_next=nxt.copy(), terminal=done and r > 0.5))
            ret += r
            state_box["env_steps"] += 1
            state = nxt
            if tc.sync:
                while can_update():
                    one_update()
            if done:
                if r > 0.5 and tc.mode == "semi":
                    # goal ends the option mid-flight; keep the rewarded tuple
                    critic.buffer.append(accumulate_semi_tuple(
                        segment.s, segment.o, segment.rewards, state,
                        gamma=tc.gamma, terminal=True))
                break
        # a segment still open at the horizon has no terminal observation
        # and is dropped

        v_spawn = float(critic.v_bar(spawn_obs[None, :])[0])
        rows.append({"episode": episode, "env_steps": state_box["env_steps"],
                     "return": ret, "switches": switches, "v_spawn": v_spawn,
                     "mode": tc.mode})

        if (not critic.greedy and (episode + 1) % tc.improve_every == 0
                and len(critic.buffer) >= tc.warmup_tuples):
            with learn_lock:
                batch = critic.buffer.sample(rng_learn, tc.batch_size)
                improve_controller(critic, np.stack([t.s for t in batch]),
                                   kl_budget=tc.kl_budget, kl_cap=tc.kl_budget,
                                   lr=tc.learning_rate, steps=tc.improve_steps)

        if (episode + 1) % tc.eval_every == 0:
            block = _run_eval_block(layout, critic, options, cfg, tag=str(episode))
            evals.append({"episode": episode,
                          "env_steps": state_box["env_steps"], **block})

    state_box["stop"] = True
    if thread is not None:
        thread.join()

    rows_path = evals_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows_path = out / "transfer_rows.csv"
        with open(rows_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
        evals_path = out / "transfer_evals.csv"
        with open(evals_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=EVAL_FIELDS)
            writer.writeheader()
            writer.writerows(evals)

    return TransferArtifacts(rows=rows, evals=evals, critic=critic,
                             env_steps=state_box["env_steps"],
                             grad_steps=state_box["grad_steps"],
                             alarm_batches=state_box["alarms"],
                             rows_path=rows_path, evals_path=evals_path)


def time_averaged_value_bias(rows: list, final_return: float) -> float:
    """Mean |V(s_spawn) - final return| over the training rows."""
    if not rows:
        raise ValueError("no training rows")
    return float(np.mean([abs(r["v_spawn"] - final_return) for r in rows]))
