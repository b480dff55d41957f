"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every training graph in this package (hindsight option recursion, mixture
densities, the transfer critic) is built from `Node` objects holding numpy
arrays.  The op functions below are dual-mode: given `Node` inputs they
record the graph, given plain ndarrays they evaluate in numpy directly, so
the same formula source serves both training and fast evaluation paths.

Double precision is non-negotiable: likelihood products over 100-step
windows underflow in float32 even in log space once gradients are involved.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import special as _sp

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Node:
    """One vertex of the computation graph.

    `value` and (after backward) `gradient` are same-shape float64 arrays.
    `parents` holds (upstream node, local-derivative closure) pairs; the
    closure maps the upstream gradient of this node to a gradient
    contribution for that parent.
    """

    __slots__ = ("value", "grad", "op", "name", "requires_grad", "parents")

    # keep numpy from consuming us in mixed expressions: defer to __r*__
    __array_ufunc__ = None

    def __init__(self, value, parents=(), op="leaf", name=None, requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.op = op
        self.name = name
        self.parents: tuple = tuple(parents)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p, _ in self.parents)
        self.requires_grad = requires_grad

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, name={self.name!r})"

    def detach(self) -> Array:
        return self.value

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return powi(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def as_node(x, name=None) -> Node:
    if isinstance(x, Node):
        return x
    return Node(x, op="const", name=name, requires_grad=False)


def param(value, name=None) -> Node:
    """A trainable leaf."""
    return Node(np.array(value, dtype=np.float64), op="param", name=name, requires_grad=True)


def _is_node(x) -> bool:
    return isinstance(x, Node)


def _any_node(*xs) -> bool:
    return any(isinstance(x, Node) for x in xs)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo(root: Node) -> list[Node]:
    """Iterative post-order over the requires_grad subgraph."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, int]] = [(root, 0)]
    while stack:
        node, pi = stack.pop()
        if pi == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        parents = node.parents
        while pi < len(parents):
            parent = parents[pi][0]
            pi += 1
            if parent.requires_grad and id(parent) not in seen:
                stack.append((node, pi))
                stack.append((parent, 0))
                break
        else:
            order.append(node)
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into `.grad` for every reachable node.

    Each node is visited exactly once, in reverse topological order; its
    gradient is complete at visit time, which is when the NaN diagnostic
    fires (naming the first offending node).
    """
    if not isinstance(loss, Node):
        raise TypeError("backward expects a Node")
    if loss.value.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if np.isnan(g).any():
            raise FloatingPointError(
                f"NaN gradient at node op={node.op!r} name={node.name!r}"
            )
        for parent, fn in node.parents:
            if not parent.requires_grad:
                continue
            pg = fn(g)
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += pg


def zero_grads(params: Sequence[Node]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# dual-mode ops
# ---------------------------------------------------------------------------

def add(a, b):
    if not _any_node(a, b):
        return np.add(a, b)
    a, b = as_node(a), as_node(b)
    out = Node(
        a.value + b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
        op="add",
    )
    return out


def sub(a, b):
    if not _any_node(a, b):
        return np.subtract(a, b)
    a, b = as_node(a), as_node(b)
    return Node(
        a.value - b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
        op="sub",
    )


def mul(a, b):
    if not _any_node(a, b):
        return np.multiply(a, b)
    a, b = as_node(a), as_node(b)
    return Node(
        a.value * b.value,
        parents=(
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
        op="mul",
    )


def div(a, b):
    if not _any_node(a, b):
        return np.divide(a, b)
    a, b = as_node(a), as_node(b)
    inv = 1.0 / b.value
    return Node(
        a.value * inv,
        parents=(
            (a, lambda g: _unbroadcast(g * inv, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value * inv * inv, b.value.shape)),
        ),
        op="div",
    )


def neg(a):
    if not _is_node(a):
        return np.negative(a)
    return Node(-a.value, parents=((a, lambda g: -g),), op="neg")


def powi(a, p: float):
    if not _is_node(a):
        return np.power(a, p)
    return Node(
        a.value ** p,
        parents=((a, lambda g: g * p * a.value ** (p - 1)),),
        op="pow",
    )


def matmul(a, b):
    if not _any_node(a, b):
        return np.matmul(a, b)
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return Node(
        a.value @ b.value,
        parents=(
            (a, lambda g: g @ b.value.T),
            (b, lambda g: a.value.T @ g),
        ),
        op="matmul",
    )


def exp(a):
    if not _is_node(a):
        return np.exp(a)
    out_val = np.exp(a.value)
    return Node(out_val, parents=((a, lambda g: g * out_val),), op="exp")


def log(a):
    if not _is_node(a):
        return np.log(a)
    return Node(np.log(a.value), parents=((a, lambda g: g / a.value),), op="log")


def tanh(a):
    if not _is_node(a):
        return np.tanh(a)
    out_val = np.tanh(a.value)
    return Node(out_val, parents=((a, lambda g: g * (1.0 - out_val * out_val)),), op="tanh")


def sigmoid(a):
    if not _is_node(a):
        return _sp.expit(a)
    out_val = _sp.expit(a.value)
    return Node(
        out_val,
        parents=((a, lambda g: g * out_val * (1.0 - out_val)),),
        op="sigmoid",
    )


def log_sigmoid(a):
    if not _is_node(a):
        return _sp.log_expit(a)
    return Node(
        _sp.log_expit(a.value),
        parents=((a, lambda g: g * _sp.expit(-a.value)),),
        op="log_sigmoid",
    )


def elu(a):
    if not _is_node(a):
        return np.where(a > 0, a, np.expm1(a))
    pos = a.value > 0
    out_val = np.where(pos, a.value, np.expm1(a.value))
    return Node(
        out_val,
        parents=((a, lambda g: g * np.where(pos, 1.0, out_val + 1.0)),),
        op="elu",
    )


def logaddexp(a, b):
    if not _any_node(a, b):
        return np.logaddexp(a, b)
    a, b = as_node(a), as_node(b)
    return Node(
        np.logaddexp(a.value, b.value),
        parents=(
            (a, lambda g: _unbroadcast(g * _sp.expit(a.value - b.value), a.value.shape)),
            (b, lambda g: _unbroadcast(g * _sp.expit(b.value - a.value), b.value.shape)),
        ),
        op="logaddexp",
    )


def _lse_np(x: Array, axis, keepdims=False) -> Array:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    if not keepdims and axis is not None:
        out = np.squeeze(out, axis=axis)
    elif not keepdims:
        out = out.reshape(())
    return out


def logsumexp(a, axis=None, keepdims=False):
    if not _is_node(a):
        return _lse_np(np.asarray(a, dtype=np.float64), axis, keepdims)
    out_val = _lse_np(a.value, axis, keepdims)
    ref = out_val if keepdims or axis is None else np.expand_dims(out_val, axis)
    soft = np.exp(a.value - ref)

    def back(g):
        gg = g if keepdims or axis is None else np.expand_dims(g, axis)
        return gg * soft

    return Node(out_val, parents=((a, back),), op="logsumexp")


def log_softmax(a, axis=-1):
    if not _is_node(a):
        return a - _lse_np(np.asarray(a, dtype=np.float64), axis, keepdims=True)
    out_val = a.value - _lse_np(a.value, axis, keepdims=True)
    soft = np.exp(out_val)

    def back(g):
        return g - soft * g.sum(axis=axis, keepdims=True)

    return Node(out_val, parents=((a, back),), op="log_softmax")


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


def clip(a, lo, hi):
    """Clamp values; gradient passes through the inclusive interior."""
    if not _is_node(a):
        return np.clip(a, lo, hi)
    mask = (a.value >= lo) & (a.value <= hi)
    return Node(
        np.clip(a.value, lo, hi),
        parents=((a, lambda g: g * mask),),
        op="clip",
    )


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    if not _any_node(a, b):
        return np.where(cond, a, b)
    a, b = as_node(a), as_node(b)
    return Node(
        np.where(cond, a.value, b.value),
        parents=(
            (a, lambda g: _unbroadcast(g * cond, a.value.shape)),
            (b, lambda g: _unbroadcast(g * ~cond, b.value.shape)),
        ),
        op="where",
    )


def getitem(a, idx):
    if not _is_node(a):
        return np.asarray(a)[idx]

    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return out

    return Node(a.value[idx], parents=((a, back),), op="getitem")


def reshape(a, shape):
    if not _is_node(a):
        return np.reshape(a, shape)
    old = a.value.shape
    return Node(
        a.value.reshape(shape),
        parents=((a, lambda g: g.reshape(old)),),
        op="reshape",
    )


def stack(items, axis=0):
    if not any(isinstance(x, Node) for x in items):
        return np.stack(items, axis=axis)
    nodes = [as_node(x) for x in items]

    def make_back(i):
        return lambda g: np.take(g, i, axis=axis)

    return Node(
        np.stack([n.value for n in nodes], axis=axis),
        parents=tuple((n, make_back(i)) for i, n in enumerate(nodes)),
        op="stack",
    )


def concatenate(items, axis=0):
    if not any(isinstance(x, Node) for x in items):
        return np.concatenate(items, axis=axis)
    nodes = [as_node(x) for x in items]
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def make_back(i):
        lo, hi = offsets[i], offsets[i + 1]

        def back(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return back

    return Node(
        np.concatenate([n.value for n in nodes], axis=axis),
        parents=tuple((n, make_back(i)) for i, n in enumerate(nodes)),
        op="concatenate",
    )


def sum_(a, axis=None, keepdims=False):
    if not _is_node(a):
        return np.sum(a, axis=axis, keepdims=keepdims)
    shp = a.value.shape

    def back(g):
        if axis is None:
            return np.broadcast_to(g, shp).copy() if np.ndim(g) == 0 else np.full(shp, g)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shp).copy()

    return Node(np.sum(a.value, axis=axis, keepdims=keepdims), parents=((a, back),), op="sum")


def mean_(a, axis=None, keepdims=False):
    if not _is_node(a):
        return np.mean(a, axis=axis, keepdims=keepdims)
    shp = a.value.shape
    if axis is None:
        n = a.value.size
    elif isinstance(axis, tuple):
        n = int(np.prod([shp[i] for i in axis]))
    else:
        n = shp[axis]

    def back(g):
        if axis is None:
            return np.full(shp, g / n)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg / n, shp).copy()

    return Node(np.mean(a.value, axis=axis, keepdims=keepdims), parents=((a, back),), op="mean")


# ---------------------------------------------------------------------------
# standalone numerics
# ---------------------------------------------------------------------------

def log_sum_exp(values) -> float:
    """Stable log(sum(exp(v))) of a nonempty vector of plain floats."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = v.max()
    if not np.isfinite(m):
        m = 0.0
    return float(m + np.log(np.sum(np.exp(v - m))))


def finite_difference_gradients(f: Callable[[], float], params: Sequence[Node], h: float = 1e-5):
    """Central-difference gradients of `f()` w.r.t. each param's entries.

    `f` must be a deterministic closure over the current param values (any
    sampling it relies on has to be frozen outside).  Used as the oracle
    against analytic backward passes; it never touches `.grad`.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads
