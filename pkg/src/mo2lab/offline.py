"""Offline stage: marginalized behaviour cloning plus terminal-model fitting.

The policy trains on the combined objective; the transition model trains in
parallel on hindsight segment tuples sampled under the current posterior.
Neither loss backpropagates into the other's weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import nets
from .config import RunConfig, derive_seed
from .envs import Episode
from .objectives import combined_loss, sample_hindsight_batch
from .options import OptionPolicy, OptionPolicyConfig, forward_pass
from .transition import TransitionModel, TransitionModelConfig, model_loss

METRIC_FIELDS = ("step", "o_bc", "o_pred", "switch_rate", "o_tran", "holdout_bc")


class WindowSampler:
    """Uniform contiguous windows of exactly `length` (state, action) pairs.

    Episodes shorter than the window are dropped.  Sampling weight is the
    number of admissible start offsets, so every window is equally likely.
    """

    def __init__(self, episodes: list[Episode], length: int):
        self.length = length
        self.states = []
        self.actions = []
        starts = []
        for ep in episodes:
            n = ep.actions.shape[0]
            if n >= length:
                self.states.append(ep.states)
                self.actions.append(ep.actions)
                starts.append(n - length + 1)
        if not self.states:
            raise ValueError(f"no episode is long enough for a window of {length}")
        self._weights = np.array(starts, dtype=np.float64)
        self._weights /= self._weights.sum()

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.choice(len(self.states), size=batch, p=self._weights)
        s = np.empty((batch, self.length, self.states[0].shape[1]))
        a = np.empty((batch, self.length, self.actions[0].shape[1]))
        for j, i in enumerate(idx):
            t0 = int(rng.integers(0, self.actions[i].shape[0] - self.length + 1))
            s[j] = self.states[i][t0:t0 + self.length]
            a[j] = self.actions[i][t0:t0 + self.length]
        return s, a


def split_episodes(episodes: list[Episode], holdout_frac: float,
                   rng: np.random.Generator):
    """Deterministic train/holdout partition by episode."""
    n = len(episodes)
    order = rng.permutation(n)
    n_hold = int(round(holdout_frac * n)) if holdout_frac > 0 else 0
    n_hold = min(n_hold, n - 1) if n > 1 else 0
    hold = {int(i) for i in order[:n_hold]}
    train = [episodes[i] for i in range(n) if i not in hold]
    held = [episodes[i] for i in sorted(hold)]
    return train, held


@dataclass
class OfflineArtifacts:
    policy: OptionPolicy
    model: TransitionModel
    metrics: list[dict]
    metrics_path: Path | None
    policy_path: Path | None
    model_path: Path | None


def build_policy(cfg: RunConfig, state_dim: int, action_dim: int) -> OptionPolicy:
    return OptionPolicy(OptionPolicyConfig(
        state_dim=state_dim, action_dim=action_dim,
        n_options=cfg.mo2.n_options, hidden=cfg.policy.hidden,
        std_floor=cfg.policy.std_floor, term_bias=cfg.policy.term_bias,
        seed=derive_seed(cfg.seed, "policy-init")))


def build_model(cfg: RunConfig, state_dim: int, action_dim: int) -> TransitionModel:
    return TransitionModel(TransitionModelConfig(
        state_dim=state_dim, action_dim=action_dim,
        n_options=cfg.mo2.n_options, n_components=cfg.model.n_components,
        hidden=cfg.model.hidden, sigma=cfg.model.sigma,
        sigma_is_std=cfg.model.sigma_is_std,
        seed=derive_seed(cfg.seed, "model-init")))


def load_policy(path) -> OptionPolicy:
    """Rebuild an option policy from a self-describing checkpoint."""
    arrays, meta = nets.load_checkpoint(path)
    if meta.get("kind") != "option-policy":
        raise ValueError(f"{path} is not an option-policy checkpoint")
    policy = OptionPolicy(OptionPolicyConfig(
        state_dim=meta["state_dim"], action_dim=meta["action_dim"],
        n_options=meta["n_options"], hidden=tuple(meta["hidden"]),
        std_floor=meta["std_floor"]))
    policy.load_state_arrays(arrays)
    return policy


def load_model(path) -> TransitionModel:
    arrays, meta = nets.load_checkpoint(path)
    if meta.get("kind") != "transition-model":
        raise ValueError(f"{path} is not a transition-model checkpoint")
    model = TransitionModel(TransitionModelConfig(
        state_dim=meta["state_dim"], action_dim=meta["action_dim"],
        n_options=meta["n_options"], n_components=meta["n_components"],
        hidden=tuple(meta["hidden"]), sigma=meta["sigma"],
        sigma_is_std=meta["sigma_is_std"]))
    model.load_state_arrays(arrays)
    return model


def holdout_bc_nats(policy: OptionPolicy, states: np.ndarray,
                    actions: np.ndarray) -> float:
    """Mean per-step action log likelihood on a fixed window batch."""
    heads = policy.head_tensors(states, actions, graph=False)
    fwd = forward_pass(heads["log_pl"], heads["beta_logit"], heads["log_pic"])
    return float(np.mean(fwd.action_ll))


def train_offline(episodes: list[Episode], cfg: RunConfig,
                  out_dir=None, progress=None, snapshot=None) -> OfflineArtifacts:
    """Run the offline stage; returns the trained pair plus metric rows.

    Randomness is split into named streams so disabling one term leaves the
    others' draws untouched (the alpha=0 run consumes no predictability
    noise and matches a plain clone trainer update for update).  `progress`
    receives each metrics row; `snapshot` receives (step, policy, model)
    at every holdout evaluation, for metrics that need the live pair.
    """
    state_dim = episodes[0].states.shape[1]
    action_dim = episodes[0].actions.shape[1]
    policy = build_policy(cfg, state_dim, action_dim)
    model = build_model(cfg, state_dim, action_dim)
    if cfg.mo2.margin < model.log_density_ceiling():
        raise ValueError(
            f"mo2.margin {cfg.mo2.margin} below the model density ceiling "
            f"{model.log_density_ceiling():.6g}")

    rng_split = np.random.default_rng(derive_seed(cfg.seed, "holdout-split"))
    train_eps, held_eps = split_episodes(episodes, cfg.offline.holdout_frac, rng_split)
    sampler = WindowSampler(train_eps, cfg.mo2.sequence_length)

    rng_batch = np.random.default_rng(derive_seed(cfg.seed, "batches"))
    rng_pred = np.random.default_rng(derive_seed(cfg.seed, "pred-noise"))
    rng_model = np.random.default_rng(derive_seed(cfg.seed, "hindsight"))

    eval_batch = None
    if held_eps:
        rng_eval = np.random.default_rng(derive_seed(cfg.seed, "holdout-eval"))
        eval_sampler = WindowSampler(held_eps, cfg.mo2.sequence_length)
        eval_batch = eval_sampler.sample(rng_eval, min(cfg.mo2.batch_size, 16))

    adam_pol = nets.adam_init(policy.params())
    adam_model = nets.adam_init(model.params())
    lr_pol = cfg.mo2.learning_rate
    lr_model = cfg.model.learning_rate
    clip = cfg.offline.max_grad_norm

    metrics: list[dict] = []
    writer = None
    metrics_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "offline_metrics.csv"
        fh = open(metrics_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()

    def model_step(states, actions):
        heads = policy.head_tensors(states, actions, graph=False)
        fwd = forward_pass(heads["log_pl"], heads["beta_logit"], heads["log_pic"])
        beta = expit(heads["beta_logit"])
        posterior = np.exp(fwd.log_alpha)
        qs, qo, qa, qf = sample_hindsight_batch(
            states, actions, beta, posterior, rng_model,
            samples_per_window=cfg.model.samples_per_window)
        m_loss = model_loss(model, qs, qo, qa, qf)
        m_loss.backward()
        nets.apply_gradients(model.params(), adam_model, lr_model, max_norm=clip)
        return m_loss

    try:
        # the predictability term reads the model, so let the model find its
        # feet under the frozen initial posterior first
        for _ in range(cfg.offline.model_warmup):
            states, actions = sampler.sample(rng_batch, cfg.mo2.batch_size)
            model_step(states, actions)

        for step in range(cfg.offline.steps):
            states, actions = sampler.sample(rng_batch, cfg.mo2.batch_size)

            step_cfg = cfg.mo2
            if cfg.offline.pred_ramp > 0 and cfg.mo2.alpha > 0:
                scale = min(1.0, (step + 1) / cfg.offline.pred_ramp)
                step_cfg = replace(cfg.mo2, alpha=cfg.mo2.alpha * scale)
            loss, _, diag = combined_loss(policy, model, states, actions,
                                          step_cfg, rng=rng_pred)
            loss.backward()
            nets.apply_gradients(policy.params(), adam_pol, lr_pol, max_norm=clip)

            m_loss = model_step(states, actions)

            last = step == cfg.offline.steps - 1
            if step % cfg.offline.log_every == 0 or last:
                row = {
                    "step": step,
                    "o_bc": -diag["bc_nats"],
                    "o_pred": -diag["pred_loss"] if "pred_loss" in diag else float("nan"),
                    "switch_rate": diag["switch_rate"],
                    "o_tran": -float(m_loss.value),
                    "holdout_bc": float("nan"),
                }
                if eval_batch is not None and (step % cfg.offline.eval_every == 0 or last):
                    row["holdout_bc"] = holdout_bc_nats(policy, *eval_batch)
                metrics.append(row)
                if writer is not None:
                    writer.writerow(row)
                if progress is not None:
                    progress(row)
            if snapshot is not None and (step % cfg.offline.eval_every == 0 or last):
                snapshot(step, policy, model)
    finally:
        if writer is not None:
            fh.close()

    policy_path = model_path = None
    if out_dir is not None:
        policy_path = Path(out_dir) / "policy.ckpt"
        model_path = Path(out_dir) / "model.ckpt"
        nets.save_checkpoint(policy_path, policy.state_arrays(),
                             meta={"kind": "option-policy", "preset": cfg.preset,
                                   "state_dim": state_dim, "action_dim": action_dim,
                                   "n_options": cfg.mo2.n_options,
                                   "hidden": list(cfg.policy.hidden),
                                   "std_floor": cfg.policy.std_floor})
        nets.save_checkpoint(model_path, model.state_arrays(),
                             meta={"kind": "transition-model", "preset": cfg.preset,
                                   "state_dim": state_dim, "action_dim": action_dim,
                                   "n_options": cfg.mo2.n_options,
                                   "n_components": cfg.model.n_components,
                                   "hidden": list(cfg.model.hidden),
                                   "sigma": cfg.model.sigma,
                                   "sigma_is_std": cfg.model.sigma_is_std})
    return OfflineArtifacts(policy=policy, model=model, metrics=metrics,
                            metrics_path=metrics_path, policy_path=policy_path,
                            model_path=model_path)


def load_offline_pair(cfg: RunConfig, policy_path, model_path):
    """Rebuild the trained pair from checkpoints written by train_offline."""
    arrays_p, meta_p = nets.load_checkpoint(policy_path)
    arrays_m, meta_m = nets.load_checkpoint(model_path)
    policy = build_policy(cfg, meta_p["state_dim"], meta_p["action_dim"])
    model = build_model(cfg, meta_m["state_dim"], meta_m["action_dim"])
    policy.load_state_arrays(arrays_p)
    model.load_state_arrays(arrays_m)
    return policy, model
