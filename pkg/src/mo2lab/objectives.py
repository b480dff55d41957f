"""Offline training objectives and the two distributional identity checks.

The offline loss has three parts, all computed from one forward pass over a
window batch:

    behaviour cloning   -mean_t log pi(a_t | h_t)
    predictability      -mean_t beta(s_t|h_t) * E_o [log q(s_f|s_t,o,a) - m]
    switch penalty      +lambda * mean_t beta(s_t|h_t)   (optional)

The predictability term marginalizes the option exactly under the hindsight
posterior and scores one terminal sample from the model's own conditional,
drawn at a reparameterized action from the low-level Gaussian.  Scoring the
model's own sample makes the term an entropy estimate: E[log q - m] =
-(H(q) + gap).  With the margin m above the model's density ceiling every
bracketed term is nonpositive, so the term can only discourage
unpredictable terminations, never reward density inflation.  Gradients
reach the policy through the switch probabilities and the posterior; the
density gap itself is held constant per sample (see predictability_loss).

All sampling is pulled out into `sample_pred_noise` / `sample_hindsight_batch`
so a loss evaluation is a deterministic function of (params, noise); central
finite differences over params then remain valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tabular as tb
from .options import OptionPolicy, ForwardResult, forward_pass
from .transition import TransitionModel, hindsight_terminal_index


@dataclass
class Mo2Config:
    alpha: float = 1.0          # predictability weight
    margin: float = 13.0        # must exceed the model's log-density ceiling
    switch_penalty: float = 0.0  # extra cost per unit of switch probability
    n_options: int = 4
    sequence_length: int = 100  # hindsight window
    batch_size: int = 16
    learning_rate: float = 3e-4

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


@dataclass
class PredNoise:
    """Frozen randomness for one predictability-loss evaluation.

    Both arrays are realized at the base parameters: actions drawn from
    each option's Gaussian and terminals drawn from the model conditioned
    on them.  Freezing the pair keeps the loss a deterministic function of
    the remaining parameters.
    """

    actions: np.ndarray    # (B, L-1, M, A) option actions at steps t >= 1
    terminals: np.ndarray  # (B, L-1, M, D) model samples at those actions


def bc_loss(fwd: ForwardResult) -> ad.Node:
    """Negative mean per-step action log likelihood."""
    if fwd.action_ll.value.size == 0:
        raise ValueError("behaviour-cloning loss over an empty batch")
    return ad.neg(ad.mean_(fwd.action_ll))


def sample_pred_noise(policy: OptionPolicy, model: TransitionModel,
                      states: np.ndarray, rng: np.random.Generator) -> PredNoise:
    """Draw the option actions and model terminals the loss will score."""
    states = np.asarray(states, dtype=np.float64)
    b, l, s_dim = states.shape
    m, a_dim = policy.cfg.n_options, policy.cfg.action_dim
    heads = policy.head_tensors(states, None, graph=False)
    eps = rng.standard_normal((b, l, m, a_dim))
    acts = (heads["mean"] + heads["std"] * eps)[:, 1:]

    s_flat = np.repeat(states[:, 1:].reshape(b * (l - 1), s_dim), m, axis=0)
    o_flat = np.tile(np.arange(m), b * (l - 1))
    a_flat = acts.reshape(b * (l - 1) * m, a_dim)
    terms = model.sample(s_flat, o_flat, a_flat, rng)
    return PredNoise(actions=acts, terminals=terms.reshape(b, l - 1, m, s_dim))


def predictability_loss(heads: dict, fwd: ForwardResult, model: TransitionModel,
                        states: np.ndarray, noise: PredNoise,
                        margin: float) -> ad.Node:
    """Negative predictability objective over steps t >= 1.

    Nonnegative whenever `margin` is at or above the model density ceiling.
    The density gap enters as a per-(step, option) constant: its expected
    derivative through the conditioning action is zero because the terminal
    was drawn from the same conditional, so that path carries nothing but
    1/sigma^2-scale sampling noise and is deliberately left out of the
    graph.  What remains is the exact gradient through the switch
    probabilities and the hindsight posterior.
    """
    ceiling = model.log_density_ceiling()
    if margin < ceiling:
        raise ValueError(
            f"margin {margin} sits below the model log-density ceiling {ceiling:.6g}; "
            "the switch-weighted objective would reward switching")
    states = np.asarray(states, dtype=np.float64)
    b, l, s_dim = states.shape
    m = heads["mean"].value.shape[2]
    a_dim = heads["mean"].value.shape[3]

    a_flat = noise.actions.reshape(b * (l - 1) * m, a_dim)
    s_flat = np.repeat(states[:, 1:].reshape(b * (l - 1), s_dim), m, axis=0)
    o_flat = np.tile(np.arange(m), b * (l - 1))
    f_flat = noise.terminals.reshape(b * (l - 1) * m, s_dim)

    log_q = model.log_density(s_flat, o_flat, a_flat, f_flat, graph=False)
    gap = log_q.reshape(b, l - 1, m) - margin
    posterior = ad.exp(ad.getitem(fwd.log_alpha, (slice(None), slice(1, None))))
    per_step = ad.sum_(ad.mul(posterior, gap), axis=-1)
    return ad.neg(ad.mean_(ad.mul(fwd.switch_prob, per_step)))


def combined_loss(policy: OptionPolicy, model: TransitionModel,
                  states: np.ndarray, actions: np.ndarray,
                  cfg: Mo2Config, rng: np.random.Generator | None = None,
                  noise: PredNoise | None = None):
    """Full offline policy loss; returns (scalar Node, diagnostics dict)."""
    heads = policy.head_tensors(states, actions, graph=True)
    fwd = forward_pass(heads["log_pl"], heads["beta_logit"], heads["log_pic"])
    loss = bc_loss(fwd)
    diag = {
        "bc_nats": float(loss.value),
        "switch_rate": float(np.mean(fwd.switch_prob.value)),
    }
    if cfg.alpha > 0.0:
        if noise is None:
            if rng is None:
                raise ValueError("need an rng or presampled noise for the predictability term")
            noise = sample_pred_noise(policy, model, states, rng)
        pred = predictability_loss(heads, fwd, model, states, noise, cfg.margin)
        diag["pred_loss"] = float(pred.value)
        loss = ad.add(loss, ad.mul(pred, cfg.alpha))
    if cfg.switch_penalty > 0.0:
        loss = ad.add(loss, ad.mul(ad.mean_(fwd.switch_prob), cfg.switch_penalty))
    diag["loss"] = float(loss.value)
    return loss, fwd, diag


def sample_hindsight_batch(states: np.ndarray, actions: np.ndarray,
                           beta_probs: np.ndarray, posterior: np.ndarray,
                           rng: np.random.Generator,
                           samples_per_window: int = 4):
    """Model-training tuples (s_t, o, a_t, s_f) harvested from windows.

    For each drawn query step t the option is sampled from the hindsight
    posterior at t and its terminal found by walking the termination coin
    forward; an option that survives to the window edge terminates there.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    b, l, _ = states.shape
    m = beta_probs.shape[-1]
    qs, qo, qa, qf = [], [], [], []
    for i in range(b):
        for _ in range(samples_per_window):
            t = int(rng.integers(0, l - 1))
            p = posterior[i, t]
            o = int(rng.choice(m, p=p / p.sum()))
            k = hindsight_terminal_index(beta_probs[i, :, o], t, rng)
            qs.append(states[i, t])
            qo.append(o)
            qa.append(actions[i, t])
            qf.append(states[i, k])
    return np.array(qs), np.array(qo, dtype=int), np.array(qa), np.array(qf)


# ---------------------------------------------------------------------------
# identity checks on exact tabular ground truth
# ---------------------------------------------------------------------------

def entropy_identity_check(mdp: tb.TabularMDP, pol: tb.TabularOptionPolicy,
                           n_rollouts: int, segments_per_rollout: int,
                           rng: np.random.Generator) -> dict:
    """Realized terminal log densities against exact segment entropies.

    For every completed option segment, log p_T(s_f | s, o, a) has exact
    conditional mean -H(p_T(. | s, o, a)), so the per-rollout sums of
    [log p_T + H] average to zero.  Rollouts stop on a segment count, not a
    step horizon, so no truncation bias enters.  Returns the sample mean,
    its standard error, and the z score.
    """
    m = pol.n_options
    terminal = [tb.exact_terminal_distribution(mdp, pol, o) for o in range(m)]
    entropy = [tb.terminal_entropy(t) for t in terminal]
    log_t = [np.log(np.clip(t, 1e-300, None)) for t in terminal]

    diffs = np.zeros(n_rollouts)
    n_segments = 0
    for i in range(n_rollouts):
        segments = tb.rollout_until_segments(mdp, pol, segments_per_rollout, rng)
        acc = 0.0
        for s0, o, a0, sf in segments:
            acc += log_t[o][s0, a0, sf] + entropy[o][s0, a0]
        diffs[i] = acc
        n_segments += len(segments)

    mean = float(diffs.mean())
    se = float(diffs.std(ddof=1) / np.sqrt(n_rollouts))
    return {"mean": mean, "se": se, "z": mean / se if se > 0 else 0.0,
            "n_segments": n_segments}


def _tv(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def stationarity_identity_check(mdp: tb.TabularMDP, pol: tb.TabularOptionPolicy,
                                n_steps: int, rng: np.random.Generator,
                                burn_in: int = 1000) -> dict:
    """Initiation-state frequencies vs switch-weighted state visitation.

    Both estimate the same stationary distribution: one counts realized
    option starts, the other Rao-Blackwellizes the switch coin.  The exact
    answer comes from the Perron eigenvector of the joint chain.
    """
    rec = tb.rollout(mdp, pol, n_steps + burn_in, rng)
    n = mdp.n_states
    states = rec.states[burn_in:]
    weights = rec.switch_weights[burn_in:]
    switched = rec.switched[burn_in:]

    init_hist = np.bincount(states[switched], minlength=n).astype(float)
    init_hist /= init_hist.sum()
    weight_hist = np.bincount(states, weights=weights, minlength=n)
    weight_hist /= weight_hist.sum()
    exact = tb.exact_initiation_distribution(mdp, pol)

    return {
        "tv_between_estimates": _tv(init_hist, weight_hist),
        "tv_initiations_vs_exact": _tv(init_hist, exact),
        "tv_weighted_vs_exact": _tv(weight_hist, exact),
        "initiations": init_hist,
        "weighted": weight_hist,
        "exact": exact,
    }
