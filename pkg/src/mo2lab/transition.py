"""Option-terminal transition model.

A mixture density network q(s_f | s, o, a): where does option o, taken in
state s with first action a, terminate?  Terminal states are defined by the
policy's own termination events, harvested in hindsight from logged
trajectories (`hindsight_terminal_index`).

The mixture means are parameterized as offsets from the query state, so an
untrained model starts near the identity map instead of near the origin.
Per-dimension variances carry a hard floor; the floor bounds the peak log
density (`log_density_ceiling`), which in turn is what makes a margin
constant larger than the ceiling turn every predictability reward into a
penalty of known sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets


@dataclass
class TransitionModelConfig:
    state_dim: int
    action_dim: int
    n_options: int = 4
    n_components: int = 4
    hidden: tuple = (64, 64)
    sigma: float = 1e-3
    sigma_is_std: bool = False  # floor applies to std instead of variance
    seed: int = 0

    @property
    def variance_floor(self) -> float:
        return self.sigma ** 2 if self.sigma_is_std else self.sigma


class TransitionModel:
    def __init__(self, cfg: TransitionModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d, k = cfg.state_dim, cfg.n_components
        in_dim = cfg.state_dim + cfg.n_options + cfg.action_dim
        self.net = nets.Mlp((in_dim, *cfg.hidden, k + 2 * k * d), rng,
                            name="tmodel", out_scale=0.1)
        self._eye = np.eye(cfg.n_options)

    def params(self) -> list[ad.Node]:
        return self.net.params()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return self.net.state_arrays()

    def load_state_arrays(self, arrays) -> None:
        self.net.load_state_arrays(arrays)

    def log_density_ceiling(self) -> float:
        """Upper bound on log q(s_f | s, o, a) implied by the variance floor."""
        d = self.cfg.state_dim
        return float(-0.5 * d * np.log(2.0 * np.pi * self.cfg.variance_floor))

    # -- heads ------------------------------------------------------------

    def _input(self, states, options, actions) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        hot = self._eye[np.asarray(options, dtype=int)]
        return np.concatenate([states, hot, actions], axis=-1)

    def _split(self, out, states):
        states = np.asarray(states, dtype=np.float64)
        n = states.shape[0]
        k, d = self.cfg.n_components, self.cfg.state_dim
        log_w = ad.log_softmax(ad.getitem(out, (slice(None), slice(0, k))), axis=-1)
        offs = ad.reshape(ad.getitem(out, (slice(None), slice(k, k + k * d))), (n, k, d))
        raw = ad.reshape(ad.getitem(out, (slice(None), slice(k + k * d, k + 2 * k * d))),
                         (n, k, d))
        mean = ad.add(offs, states[:, None, :])
        if self.cfg.sigma_is_std:
            std = nets.bounded_std(raw, self.cfg.sigma)
        else:
            var = ad.add(nets.softplus(raw), self.cfg.variance_floor)
            std = ad.powi(var, 0.5)
        return log_w, mean, std

    def heads(self, states, options, actions, graph: bool = True):
        """Mixture parameters for a batch of (s, o, a) queries.

        Returns log_w (N, K), mean (N, K, D), std (N, K, D).
        """
        x = self._input(states, options, actions)
        out = self.net(x) if graph else self.net.infer(x)
        return self._split(out, states)

    # -- densities and sampling -------------------------------------------

    def log_density(self, states, options, actions, terminals, graph: bool = True):
        """log q(s_f | s, o, a) for each row; Node in graph mode."""
        log_w, mean, std = self.heads(states, options, actions, graph=graph)
        sf = np.asarray(terminals, dtype=np.float64)[:, None, :]
        comp = nets.gaussian_log_prob(sf, mean, std)  # (N, K)
        return ad.logsumexp(ad.add(log_w, comp), axis=-1)

    def sample(self, states, options, actions, rng: np.random.Generator) -> np.ndarray:
        """Draw one terminal state per query row (plain numpy)."""
        log_w, mean, std = self.heads(states, options, actions, graph=False)
        n, k, _ = mean.shape
        w = np.exp(log_w)
        comps = np.array([rng.choice(k, p=w[i] / w[i].sum()) for i in range(n)])
        mu = mean[np.arange(n), comps]
        sd = std[np.arange(n), comps]
        return mu + sd * rng.standard_normal(mu.shape)


def hindsight_terminal_index(beta_seq: np.ndarray, start: int,
                             rng: np.random.Generator) -> int:
    """Walk the option's termination coin from start+1 to the window end.

    beta_seq holds beta(s_k, o) for one fixed option along the window.  The
    first success is the terminal step; if the option survives the whole
    window the final step is used as the terminal.
    """
    length = len(beta_seq)
    for k in range(start + 1, length):
        if rng.uniform() < beta_seq[k]:
            return k
    return length - 1


def model_loss(model: TransitionModel, states, options, actions, terminals) -> ad.Node:
    """Negative mean terminal log density over a presampled batch."""
    ll = model.log_density(states, options, actions, terminals, graph=True)
    return ad.neg(ad.mean_(ll))
