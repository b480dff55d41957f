"""Small dense networks, distribution helpers, Adam, checkpoint files.

Networks keep their weights as autodiff `Node` leaves.  `__call__` builds a
graph (for losses); `infer` runs the same arithmetic on the raw float64
arrays for rollout-speed evaluation.  Both paths share one layer loop, so
they cannot drift apart.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from . import autodiff as ad

LOG_2PI = float(np.log(2.0 * np.pi))

_ACTIVATIONS = {
    "elu": ad.elu,
    "tanh": ad.tanh,
    "identity": lambda x: x,
}


class Mlp:
    """Fully connected net: sizes = (in, hidden..., out)."""

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator,
        activation: str = "elu",
        name: str = "mlp",
        out_scale: float = 1.0,
    ):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self.name = name
        self.weights: list[ad.Node] = []
        last = len(self.sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            scale = 1.0 / np.sqrt(n_in)
            if i == last:
                scale *= out_scale
            w = ad.param(rng.normal(0.0, scale, size=(n_in, n_out)), name=f"{name}/W{i}")
            b = ad.param(np.zeros(n_out), name=f"{name}/b{i}")
            self.weights += [w, b]

    def params(self) -> list[ad.Node]:
        return list(self.weights)

    def _run(self, x, ws):
        act = _ACTIVATIONS[self.activation]
        n_layers = len(ws) // 2
        h = x
        for i in range(n_layers):
            h = ad.add(ad.matmul(h, ws[2 * i]), ws[2 * i + 1])
            if i < n_layers - 1:
                h = act(h)
        return h

    def __call__(self, x):
        """Graph-building forward; x is (batch, in) Node or ndarray."""
        return self._run(x if isinstance(x, ad.Node) else np.asarray(x, dtype=np.float64),
                         self.weights)

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Pure-numpy forward on the current weight values."""
        return self._run(np.asarray(x, dtype=np.float64), [w.value for w in self.weights])

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {w.name: w.value for w in self.weights}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for w in self.weights:
            src = arrays[w.name]
            if src.shape != w.value.shape:
                raise ValueError(f"shape mismatch for {w.name}: {src.shape} vs {w.value.shape}")
            w.value[...] = src


# ---------------------------------------------------------------------------
# distribution helpers (dual-mode: Node or ndarray arguments)
# ---------------------------------------------------------------------------

def gaussian_log_prob(x, mean, std):
    """Sum of independent-Normal log densities over the last axis."""
    z = ad.div(ad.sub(x, mean), std)
    per_dim = ad.sub(ad.mul(ad.mul(z, z), -0.5), ad.add(ad.log(std), 0.5 * LOG_2PI))
    return ad.sum_(per_dim, axis=-1)


def softplus(x):
    """log(1 + e^x), stable at both tails."""
    if isinstance(x, ad.Node):
        return ad.sub(ad.logaddexp(x, np.zeros_like(x.value)), 0.0)
    return np.logaddexp(x, 0.0)


def bounded_std(raw, floor: float):
    """Smooth positive std with a hard lower bound: floor + softplus(raw)."""
    return ad.add(softplus(raw), floor)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_init(params: Sequence[ad.Node]) -> dict:
    return {
        "step": 0,
        "m": [np.zeros_like(p.value) for p in params],
        "v": [np.zeros_like(p.value) for p in params],
    }


def adam_step(
    params: Sequence[ad.Node],
    grads: Sequence[np.ndarray],
    state: dict,
    lr: float,
    betas=(0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update.  Rejects any param/grad shape mismatch."""
    if len(params) != len(grads) or len(params) != len(state["m"]):
        raise ValueError("params, grads and state must have equal length")
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.value.shape:
            raise ValueError(
                f"grad shape {g.shape} does not match param {p.name!r} shape {p.value.shape}"
            )
        m = state["m"][i]
        v = state["v"][i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


def apply_gradients(params: Sequence[ad.Node], state: dict, lr: float,
                    max_norm: float | None = None) -> float:
    """Adam-update from the accumulated `.grad` fields; returns grad norm.

    Optional global-norm clipping keeps early mixture-density updates from
    blowing past the variance floor.
    """
    grads = []
    for p in params:
        if p.grad is None:
            grads.append(np.zeros_like(p.value))
        else:
            grads.append(p.grad)
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm is not None and norm > max_norm and norm > 0:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    adam_step(params, grads, state, lr)
    ad.zero_grads(params)
    return norm


# ---------------------------------------------------------------------------
# checkpoint files: one JSON header line, then raw little-endian float64
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = [[name, list(np.asarray(a).shape)] for name, a in arrays.items()]
    header = {
        "format": CHECKPOINT_FORMAT,
        "dtype": "<f8",
        "entries": entries,
        "meta": meta or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for _, a in arrays.items():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
        arrays = {}
        for name, shape in header["entries"]:
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"truncated checkpoint entry {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        trailing = f.read(1)
        if trailing:
            raise ValueError("trailing bytes after final checkpoint entry")
    return arrays, header["meta"]
