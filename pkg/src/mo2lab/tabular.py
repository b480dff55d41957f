"""Exact machinery on small finite MDPs.

Used to validate the continuous-control estimators against quantities that
can be computed in closed form: the option-terminal distribution solved by
absorbing-chain linear algebra, and the stationary distribution of the
joint (previous option, state) chain solved by eigenvector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg


@dataclass
class TabularMDP:
    transitions: np.ndarray  # (S, A, S) row-stochastic in the last axis
    initial: np.ndarray      # (S,)

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        if not np.allclose(self.transitions.sum(axis=-1), 1.0, atol=1e-10):
            raise ValueError("transition rows must sum to one")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


@dataclass
class TabularOptionPolicy:
    action_probs: np.ndarray  # (S, M, A) pi_L(a | s, o)
    beta: np.ndarray          # (S, M) termination probabilities
    pic: np.ndarray           # (S, M) controller pi_C(o | s)

    def __post_init__(self):
        self.action_probs = np.asarray(self.action_probs, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.pic = np.asarray(self.pic, dtype=np.float64)

    @property
    def n_options(self) -> int:
        return self.beta.shape[1]


def chain_mdp(n_states: int, slip: float = 0.1) -> TabularMDP:
    """Line graph; action 0 steps left, action 1 steps right, `slip` stays."""
    trans = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        trans[s, 0, max(s - 1, 0)] += 1.0 - slip
        trans[s, 0, s] += slip
        trans[s, 1, min(s + 1, n_states - 1)] += 1.0 - slip
        trans[s, 1, s] += slip
    return TabularMDP(trans, np.full(n_states, 1.0 / n_states))


def ring_mdp(n_states: int) -> TabularMDP:
    """Cycle graph; action 0 steps clockwise, action 1 counter-clockwise."""
    trans = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        trans[s, 0, (s + 1) % n_states] = 1.0
        trans[s, 1, (s - 1) % n_states] = 1.0
    return TabularMDP(trans, np.full(n_states, 1.0 / n_states))


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int) -> TabularMDP:
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    return TabularMDP(trans, rng.dirichlet(np.ones(n_states)))


def random_option_policy(rng: np.random.Generator, n_states: int, n_options: int,
                         n_actions: int, beta_lo: float = 0.1,
                         beta_hi: float = 0.9) -> TabularOptionPolicy:
    return TabularOptionPolicy(
        action_probs=rng.dirichlet(np.ones(n_actions), size=(n_states, n_options)),
        beta=rng.uniform(beta_lo, beta_hi, (n_states, n_options)),
        pic=rng.dirichlet(np.ones(n_options), size=n_states),
    )


# ---------------------------------------------------------------------------
# exact quantities
# ---------------------------------------------------------------------------

def option_state_kernel(mdp: TabularMDP, pol: TabularOptionPolicy, option: int) -> np.ndarray:
    """State chain P_o(s' | s) induced by running option o without stopping."""
    return np.einsum("sa,sat->st", pol.action_probs[:, option, :], mdp.transitions)


def exact_terminal_distribution(mdp: TabularMDP, pol: TabularOptionPolicy,
                                option: int) -> np.ndarray:
    """p_T[s, a, s_f]: distribution of the state where `option` terminates.

    Semantics: from s take the first action a, land in s1; on each arrival
    the termination coin beta(s_arrived, o) is flipped first, continuing
    with pi_L(. | s, o) otherwise.  Solved exactly as an absorbing chain:
        T = (I - diag(1-beta_o) P_o)^{-1} diag(beta_o)
    where T[s1, s_f] is the terminal distribution when arriving at s1.
    """
    n = mdp.n_states
    beta_o = pol.beta[:, option]
    if np.any(beta_o <= 0):
        # a zero-termination state can make the chain non-absorbing
        raise ValueError("termination probabilities must be positive everywhere")
    p_o = option_state_kernel(mdp, pol, option)
    arrive = linalg.solve(np.eye(n) - (1.0 - beta_o)[:, None] * p_o, np.diag(beta_o))
    return np.einsum("sat,tf->saf", mdp.transitions, arrive)


def terminal_entropy(p_terminal: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each (s, a) terminal distribution."""
    p = np.clip(p_terminal, 1e-300, None)
    return -(p_terminal * np.log(p)).sum(axis=-1)


def joint_chain_kernel(mdp: TabularMDP, pol: TabularOptionPolicy) -> np.ndarray:
    """Kernel of the chain over x_t = (o_{t-1}, s_t), row-stochastic.

    One step: resolve the switch at s_t (keep o_{t-1} or redraw from the
    controller), act with the resulting option, observe s_{t+1}.
    """
    n_s, m = mdp.n_states, pol.n_options
    keep = np.zeros((m, n_s, m))  # p(o_t | s_t, o_prev)
    for o_prev in range(m):
        keep[o_prev] = pol.beta[:, [o_prev]] * pol.pic
        keep[o_prev, :, o_prev] += 1.0 - pol.beta[:, o_prev]
    state_kernels = np.stack(
        [option_state_kernel(mdp, pol, o) for o in range(m)], axis=1
    )  # (s, o_t, s')
    kernel = np.einsum("psm,smt->psmt", keep, state_kernels)
    return kernel.reshape(m * n_s, m * n_s)


def stationary_distribution(kernel: np.ndarray) -> np.ndarray:
    """Left Perron eigenvector of a row-stochastic matrix, normalized."""
    vals, vecs = linalg.eig(kernel.T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, idx])
    v = np.abs(v)
    return v / v.sum()


def exact_initiation_distribution(mdp: TabularMDP, pol: TabularOptionPolicy) -> np.ndarray:
    """Where do options start?  Switch-weighted stationary state occupancy."""
    m, n_s = pol.n_options, mdp.n_states
    nu = stationary_distribution(joint_chain_kernel(mdp, pol)).reshape(m, n_s)
    weights = np.einsum("ps,sp->s", nu, pol.beta)
    return weights / weights.sum()


# ---------------------------------------------------------------------------
# generative rollouts
# ---------------------------------------------------------------------------

@dataclass
class RolloutRecord:
    states: np.ndarray        # (T,)
    options: np.ndarray       # (T,)
    actions: np.ndarray       # (T,)
    switch_weights: np.ndarray  # (T,) beta(s_t, o_{t-1}); 1 at t=0 by convention
    switched: np.ndarray      # (T,) bool, True when a fresh option was drawn
    segments: list            # (s_init, option, first_action, s_terminal)


def rollout_until_segments(mdp: TabularMDP, pol: TabularOptionPolicy,
                           n_segments: int, rng: np.random.Generator,
                           max_steps: int = 1_000_000) -> list:
    """Run the generative process until `n_segments` segments complete.

    Stopping on a segment count (not a step horizon) keeps the realized
    terminals unbiased: truncating at a horizon and dropping the open
    segment would select for short segments.
    """
    s = int(rng.choice(mdp.n_states, p=mdp.initial))
    o = int(rng.choice(pol.n_options, p=pol.pic[s]))
    seg_start, seg_first_action = s, None
    segments = []
    for _ in range(max_steps):
        a = int(rng.choice(mdp.n_actions, p=pol.action_probs[s, o]))
        if seg_first_action is None:
            seg_first_action = a
        s = int(rng.choice(mdp.n_states, p=mdp.transitions[s, a]))
        if rng.uniform() < pol.beta[s, o]:
            segments.append((seg_start, o, seg_first_action, s))
            if len(segments) == n_segments:
                return segments
            o = int(rng.choice(pol.n_options, p=pol.pic[s]))
            seg_start, seg_first_action = s, None
    raise RuntimeError("segment quota not reached; terminations too rare")


def rollout(mdp: TabularMDP, pol: TabularOptionPolicy, n_steps: int,
            rng: np.random.Generator, start_state: int | None = None) -> RolloutRecord:
    """Run the generative option process; collect completed segments.

    A segment closes at the arrival state whose termination coin fires;
    the final segment, if still open at the horizon, is dropped.
    """
    n_s, n_a, m = mdp.n_states, mdp.n_actions, pol.n_options
    s = int(rng.choice(n_s, p=mdp.initial)) if start_state is None else start_state

    states = np.empty(n_steps, dtype=int)
    options = np.empty(n_steps, dtype=int)
    actions = np.empty(n_steps, dtype=int)
    weights = np.empty(n_steps)
    switched = np.zeros(n_steps, dtype=bool)
    segments = []

    o = int(rng.choice(m, p=pol.pic[s]))
    seg_start, seg_first_action = s, None
    for t in range(n_steps):
        if t > 0:
            w = pol.beta[s, o]
            weights[t] = w
            if rng.uniform() < w:
                segments.append((seg_start, o, seg_first_action, s))
                o = int(rng.choice(m, p=pol.pic[s]))
                switched[t] = True
                seg_start, seg_first_action = s, None
        else:
            weights[0] = 1.0
            switched[0] = True
        a = int(rng.choice(n_a, p=pol.action_probs[s, o]))
        if seg_first_action is None:
            seg_first_action = a
        states[t], options[t], actions[t] = s, o, a
        s = int(rng.choice(n_s, p=mdp.transitions[s, a]))

    return RolloutRecord(states, options, actions, weights, switched, segments)
