"""Option policies and the hindsight option-posterior recursion.

An option policy is three networks sharing a state input:

    low   pi_L(a | s, o)   diagonal Gaussian per option
    term  beta(s, o)       per-option termination Bernoulli
    ctrl  pi_C(o | s)      categorical over options at switch points

Given an observed trajectory, the posterior over which option was active
at each step is computed by a forward recursion over the per-step option
transition kernel

    p(o_t | s_t, o_{t-1}) = (1 - beta(s_t, o_{t-1})) * [o_t = o_{t-1}]
                          + beta(s_t, o_{t-1}) * pi_C(o_t | s_t)

The recursion is normalized at every step; the step normalizers are exactly
the per-step action likelihoods pi(a_t | h_t), which is what behaviour
cloning maximizes.  `forward_pass` is dual-mode (autodiff graph or plain
numpy); `brute_force_posterior` recomputes everything by enumerating all
option sequences and is the oracle the recursion is tested against.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import special as _sp

from . import autodiff as ad
from . import nets


@dataclass
class OptionPolicyConfig:
    state_dim: int
    action_dim: int
    n_options: int = 4
    hidden: tuple = (64, 64)
    std_floor: float = 1e-2
    term_bias: float = -2.0  # start sticky: fresh options persist ~8 steps
    seed: int = 0


class OptionPolicy:
    """The three option-policy networks plus rollout-time sampling."""

    def __init__(self, cfg: OptionPolicyConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        s, a, m = cfg.state_dim, cfg.action_dim, cfg.n_options
        self.low = nets.Mlp((s + m, *cfg.hidden, 2 * a), rng, name="low", out_scale=0.1)
        self.term = nets.Mlp((s, *cfg.hidden, m), rng, name="term", out_scale=0.1)
        self.term.weights[-1].value[...] = cfg.term_bias
        self.ctrl = nets.Mlp((s, *cfg.hidden, m), rng, name="ctrl", out_scale=0.1)
        self._eye = np.eye(m)

    def params(self) -> list[ad.Node]:
        return self.low.params() + self.term.params() + self.ctrl.params()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for net in (self.low, self.term, self.ctrl):
            out.update(net.state_arrays())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for net in (self.low, self.term, self.ctrl):
            net.load_state_arrays(arrays)

    # -- per-step head tensors ------------------------------------------

    def _low_input(self, states: np.ndarray) -> np.ndarray:
        """(B, L, S) -> (B*L*M, S+M): every option one-hot per state."""
        b, l, s = states.shape
        m = self.cfg.n_options
        flat = np.repeat(states.reshape(b * l, s), m, axis=0)
        hot = np.tile(self._eye, (b * l, 1))
        return np.concatenate([flat, hot], axis=1)

    def head_tensors(self, states: np.ndarray, actions: np.ndarray | None,
                     graph: bool = True) -> dict[str, Any]:
        """Per-step tensors for a window batch.

        states (B, L, S), actions (B, L, A) or None.  Returns log_pl and
        beta_logit and log_pic each (B, L, M), plus action mean/std
        (B, L, M, A).  With graph=False everything is plain numpy.
        """
        states = np.asarray(states, dtype=np.float64)
        b, l, _ = states.shape
        m, a_dim = self.cfg.n_options, self.cfg.action_dim

        flat = states.reshape(b * l, -1)
        low_in = self._low_input(states)
        if graph:
            low_out = self.low(low_in)
            beta_logit = ad.reshape(self.term(flat), (b, l, m))
            log_pic = ad.log_softmax(ad.reshape(self.ctrl(flat), (b, l, m)), axis=-1)
        else:
            low_out = self.low.infer(low_in)
            beta_logit = self.term.infer(flat).reshape(b, l, m)
            log_pic = ad.log_softmax(self.ctrl.infer(flat).reshape(b, l, m), axis=-1)

        mean = ad.reshape(ad.getitem(low_out, (slice(None), slice(0, a_dim))),
                          (b, l, m, a_dim))
        raw = ad.reshape(ad.getitem(low_out, (slice(None), slice(a_dim, 2 * a_dim))),
                         (b, l, m, a_dim))
        std = nets.bounded_std(raw, self.cfg.std_floor)

        out = {"beta_logit": beta_logit, "log_pic": log_pic, "mean": mean, "std": std}
        if actions is not None:
            acts = np.asarray(actions, dtype=np.float64)[:, :, None, :]
            out["log_pl"] = nets.gaussian_log_prob(acts, mean, std)
        return out

    # -- rollout-time sampling (generative, not hindsight) ---------------

    def initial_option(self, state: np.ndarray, rng: np.random.Generator) -> int:
        logits = self.ctrl.infer(state[None, :])[0]
        p = _sp.softmax(logits)
        return int(rng.choice(self.cfg.n_options, p=p))

    def step_option(self, state: np.ndarray, option: int,
                    rng: np.random.Generator) -> tuple[int, bool]:
        """Sample the switch/keep decision entering `state`."""
        beta = float(_sp.expit(self.term.infer(state[None, :])[0, option]))
        if rng.uniform() < beta:
            return self.initial_option(state, rng), True
        return option, False

    def termination_prob(self, state: np.ndarray, option: int) -> float:
        return float(_sp.expit(self.term.infer(state[None, :])[0, option]))

    def action_stats(self, state: np.ndarray, option: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.cfg.n_options
        hot = self._eye[option]
        out = self.low.infer(np.concatenate([state, hot])[None, :])[0]
        a = self.cfg.action_dim
        mean = out[:a]
        std = nets.bounded_std(out[a:], self.cfg.std_floor)
        return mean, std

    def act(self, state: np.ndarray, option: int, rng: np.random.Generator,
            stochastic: bool = True) -> np.ndarray:
        mean, std = self.action_stats(state, option)
        if not stochastic:
            return mean
        return mean + std * rng.standard_normal(mean.shape)


# ---------------------------------------------------------------------------
# option transition kernel
# ---------------------------------------------------------------------------

def option_transition_matrix(beta: np.ndarray, pic: np.ndarray) -> np.ndarray:
    """Kernel rows P[..., o_prev, o_next]; each row sums to one.

    beta[..., o_prev] is the termination probability of the incumbent,
    pic[..., o_next] the controller distribution at the current state.
    """
    beta = np.asarray(beta, dtype=np.float64)
    pic = np.asarray(pic, dtype=np.float64)
    m = beta.shape[-1]
    stay = (1.0 - beta)[..., :, None] * np.eye(m)
    switch = beta[..., :, None] * pic[..., None, :]
    return stay + switch


# ---------------------------------------------------------------------------
# forward recursion
# ---------------------------------------------------------------------------

@dataclass
class ForwardResult:
    """Per-window posterior quantities; Nodes in graph mode, arrays otherwise.

    log_alpha[:, t]    log pi_H(o_t | h_t), normalized over options
    log_lagged[:, t]   log pi_H(o_t | h_{t+1}), t = 0..L-2 (one-step-stale
                       option given the next action is observed)
    switch_prob[:, t]  beta(s_{t+1} | h_{t+1}), t = 0..L-2
    action_ll[:, t]    log pi(a_t | h_t)
    """

    log_alpha: Any
    log_lagged: Any
    switch_prob: Any
    action_ll: Any


def forward_pass(log_pl, beta_logit, log_pic) -> ForwardResult:
    """Run the normalized forward recursion over a window batch.

    All inputs are (B, L, M): per-step low-level action log-likelihoods,
    termination logits, and controller log-probabilities.  Accepts Nodes
    (training graph) or ndarrays (fast path) interchangeably.
    """
    shape = log_pl.value.shape if isinstance(log_pl, ad.Node) else np.shape(log_pl)
    _, length, _ = shape

    log_beta = ad.log_sigmoid(beta_logit)
    log_keep = ad.log_sigmoid(ad.neg(beta_logit))

    def at(x, t):
        return ad.getitem(x, (slice(None), t))

    log_alpha_t = at(log_pic, 0)
    alphas = [log_alpha_t]
    lagged = []
    switches = []
    lls = []
    for t in range(1, length):
        log_joint_prev = ad.add(log_alpha_t, at(log_pl, t - 1))
        log_z = ad.logsumexp(log_joint_prev, axis=-1)
        lls.append(log_z)
        log_lagged_t = ad.sub(log_joint_prev, ad.reshape(log_z, (-1, 1)))
        lagged.append(log_lagged_t)

        # kernel applied in log space: stay term plus switch term
        stay = ad.add(at(log_keep, t), log_lagged_t)
        mass = ad.logsumexp(ad.add(at(log_beta, t), log_lagged_t), axis=-1)
        switch = ad.add(at(log_pic, t), ad.reshape(mass, (-1, 1)))
        log_alpha_t = ad.logaddexp(stay, switch)
        alphas.append(log_alpha_t)
        switches.append(ad.exp(mass))

    lls.append(ad.logsumexp(ad.add(log_alpha_t, at(log_pl, length - 1)), axis=-1))

    return ForwardResult(
        log_alpha=ad.stack(alphas, axis=1),
        log_lagged=ad.stack(lagged, axis=1) if lagged else None,
        switch_prob=ad.stack(switches, axis=1) if switches else None,
        action_ll=ad.stack(lls, axis=1),
    )


# ---------------------------------------------------------------------------
# enumeration oracle
# ---------------------------------------------------------------------------

def brute_force_posterior(log_pl: np.ndarray, beta: np.ndarray,
                          pic: np.ndarray) -> dict[str, np.ndarray]:
    """Recompute everything `forward_pass` reports by exhaustive enumeration.

    Inputs are single-sequence tables (L, M): action log-likelihoods,
    termination probabilities, controller probabilities.  Enumerates all
    M^L option sequences; exponential, test-scale only.
    """
    log_pl = np.asarray(log_pl, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    pic = np.asarray(pic, dtype=np.float64)
    length, m = log_pl.shape

    kernels = [option_transition_matrix(beta[t], pic[t]) for t in range(1, length)]
    pl = np.exp(log_pl)

    alpha = np.zeros((length, m))
    lagged = np.zeros((max(length - 1, 1), m))
    prefix_like = np.zeros(length)  # p(a_0..a_t)

    # summing full-sequence priors is safe at any prefix length: the
    # transition factors beyond t marginalize to one over future options
    for seq in itertools.product(range(m), repeat=length):
        prior = pic[0, seq[0]]
        for t in range(1, length):
            prior *= kernels[t - 1][seq[t - 1], seq[t]]
        act = 1.0
        for t in range(length):
            # weight of (o_t, a_{<t}): actions strictly before t
            alpha[t, seq[t]] += prior * act
            act *= pl[t, seq[t]]
            if t + 1 < length:
                # weight of (o_t, a_{<=t}): the lagged posterior at h_{t+1}
                lagged[t, seq[t]] += prior * act
            prefix_like[t] += prior * act

    alpha /= alpha.sum(axis=1, keepdims=True)
    if length > 1:
        lagged /= lagged.sum(axis=1, keepdims=True)
        switch = np.einsum("tm,tm->t", beta[1:], lagged[: length - 1])
    else:
        switch = np.zeros(0)

    action_ll = np.empty(length)
    action_ll[0] = np.log(prefix_like[0])
    action_ll[1:] = np.diff(np.log(prefix_like))

    return {
        "log_alpha": np.log(alpha),
        "log_lagged": np.log(lagged[: max(length - 1, 0)]) if length > 1 else np.zeros((0, m)),
        "switch_prob": switch,
        "action_ll": action_ll,
    }
