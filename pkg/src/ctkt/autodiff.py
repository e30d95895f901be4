"""Dense float64 tensors with tape-based reverse-mode differentiation.

The tape (`Graph`) records executed ops in execution order; `backward`
replays it in exact reverse order, accumulating gradients into leaf
tensors (those not produced by a recorded op). Graphs are thread-local,
so distinct workers can build independent graphs concurrently.

Broadcasting is deliberately restricted to scalar-vs-tensor; every other
shape promotion is an explicit op (`add_rowvec`, `stack_rows`, ...).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import (
    ContractError,
    DegenerateRowError,
    DimensionError,
    DomainError,
)

_TLS = threading.local()


def _active_graph():
    return getattr(_TLS, "graph", None)


class Graph:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self.nodes = []  # (out_tensor, backward_fn); execution order

    def record(self, out, backward_fn):
        self.nodes.append((out, backward_fn))

    def __len__(self):
        return len(self.nodes)


@contextmanager
def new_graph():
    """Activate a fresh tape for the current thread."""
    g = Graph()
    prev = _active_graph()
    _TLS.graph = g
    try:
        yield g
    finally:
        _TLS.graph = prev


@contextmanager
def no_grad():
    """Disable recording (frozen/eval forward passes)."""
    prev = _active_graph()
    _TLS.graph = None
    try:
        yield
    finally:
        _TLS.graph = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "graph")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.graph = None  # set when produced by a recorded op

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; numbers auto-wrap as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def constant(data):
    return Tensor(data, requires_grad=False)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(out, parents, backward_fn):
    """Register `out` on the active tape if any parent wants gradients."""
    g = _active_graph()
    if g is None:
        return out
    for p in parents:
        if p.requires_grad:
            out.requires_grad = True
            out.graph = g
            g.record(out, backward_fn)
            return out
    return out


def backward(root: Tensor):
    """Populate leaf gradients with d(root)/d(leaf).

    Repeated calls without zeroing accumulate into leaf `.grad`.
    """
    if root.graph is None:
        raise ContractError("backward root was not produced through a graph")
    if root.data.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    g = root.graph
    flowing = {id(root): np.ones(())}

    def send(parent, grad):
        if not parent.requires_grad:
            return
        if parent.graph is g:
            key = id(parent)
            cur = flowing.get(key)
            flowing[key] = grad if cur is None else cur + grad
        else:
            # leaf (or produced by an older graph): accumulate persistently
            parent.grad = np.array(grad) if parent.grad is None else parent.grad + grad

    for out, fn in reversed(g.nodes):
        gout = flowing.pop(id(out), None)
        if gout is None:
            continue
        for parent, gparent in fn(gout):
            send(parent, gparent)


# ---------------------------------------------------------------------------
# ops


def _scalar_mix(a, b):
    """Classify operand pair: same-shape, a-scalar or b-scalar."""
    if a.data.shape == b.data.shape:
        return "same"
    if a.data.shape == ():
        return "a"
    if b.data.shape == ():
        return "b"
    raise DimensionError(
        f"elementwise op needs equal shapes or a scalar, got {a.data.shape} and {b.data.shape}"
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _scalar_mix(a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        ga = g.sum() if mode == "a" else g
        gb = g.sum() if mode == "b" else g
        return [(a, ga), (b, gb)]

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    mode = _scalar_mix(a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        ga = g.sum() if mode == "a" else g
        gb = -(g.sum() if mode == "b" else g)
        return [(a, ga), (b, gb)]

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    mode = _scalar_mix(a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        ga = g * b.data
        gb = g * a.data
        if mode == "a":
            ga = ga.sum()
        if mode == "b":
            gb = gb.sum()
        return [(a, ga), (b, gb)]

    return _record(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    mode = _scalar_mix(a, b)
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        if mode == "a":
            ga = ga.sum()
        if mode == "b":
            gb = gb.sum()
        return [(a, ga), (b, gb)]

    return _record(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: [(a, g * c)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes do not chain: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _record(out, (a, b), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)
    return _record(out, (a,), lambda g: [(a, g * y * (1.0 - y))])


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: [(a, g * y)])


def log(a: Tensor, zero_to_neg_inf: bool = False) -> Tensor:
    x = a.data
    if np.any(x < 0):
        raise DomainError("log of negative value")
    if np.any(x == 0) and not zero_to_neg_inf:
        raise DomainError("log of zero (enable zero_to_neg_inf for log-space sentinels)")
    with np.errstate(divide="ignore"):
        y = np.log(x)
    out = Tensor(y)

    def bwd(g):
        gx = np.where(x > 0, g / np.where(x > 0, x, 1.0), 0.0)
        return [(a, gx)]

    return _record(out, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    y = np.sqrt(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: [(a, g / (2.0 * y))])


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _record(out, (a,), lambda g: [(a, g * mask)])


def tsum(a: Tensor, axis=None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))

    def bwd(g):
        if axis is None:
            return [(a, np.broadcast_to(g, a.data.shape))]
        ge = np.expand_dims(g, axis)
        return [(a, np.broadcast_to(ge, a.data.shape))]

    return _record(out, (a,), bwd)


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def tmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max along `axis`; gradient flows only to the (lowest-index) argmax."""
    idx = np.argmax(a.data, axis=axis)
    out = Tensor(np.max(a.data, axis=axis))

    def bwd(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return [(a, gx)]

    return _record(out, (a,), bwd)


def _check_rows_not_all_neg_inf(x):
    finite_any = np.any(np.isfinite(x), axis=-1)
    if not np.all(finite_any):
        raise DegenerateRowError("softmax row with no finite entry")


def softmax(a: Tensor) -> Tensor:
    """Row softmax over the last axis; -inf entries map to exactly 0."""
    x = a.data
    _check_rows_not_all_neg_inf(x)
    m = np.max(x, axis=-1, keepdims=True)
    z = np.exp(x - m)
    y = z / z.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return [(a, y * (g - dot))]

    return _record(out, (a,), bwd)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    _check_rows_not_all_neg_inf(x)
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    with np.errstate(divide="ignore"):
        lse = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    y = z - lse
    out = Tensor(y)

    def bwd(g):
        s = np.sum(g, axis=-1, keepdims=True)
        return [(a, g - np.exp(y) * s)]

    return _record(out, (a,), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.data.shape}")
    out = Tensor(a.data.T)
    return _record(out, (a,), lambda g: [(a, g.T)])


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: [(a, g.reshape(a.data.shape))])


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pairs = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            pairs.append((t, g[tuple(sl)]))
        return pairs

    return _record(out, tuple(tensors), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"slice_cols expects a matrix, got shape {a.data.shape}")
    out = Tensor(a.data[:, start:stop])

    def bwd(g):
        gx = np.zeros_like(a.data)
        gx[:, start:stop] = g
        return [(a, gx)]

    return _record(out, (a,), bwd)


def row(a: Tensor, i: int) -> Tensor:
    """Extract row i of a matrix as a vector."""
    out = Tensor(a.data[i])

    def bwd(g):
        gx = np.zeros_like(a.data)
        gx[i] = g
        return [(a, gx)]

    return _record(out, (a,), bwd)


def element(a: Tensor, i: int) -> Tensor:
    """Extract entry i of a vector as a scalar."""
    if a.data.ndim != 1:
        raise DimensionError(f"element expects a vector, got shape {a.data.shape}")
    out = Tensor(a.data[i])

    def bwd(g):
        gx = np.zeros_like(a.data)
        gx[i] = g
        return [(a, gx)]

    return _record(out, (a,), bwd)


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows (embedding lookup); duplicate indices accumulate grads."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx])

    def bwd(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx, g)
        return [(a, gx)]

    return _record(out, (a,), bwd)


def take_index_rows(a: Tensor, idx) -> Tensor:
    """Pick one column per row: out[n] = a[n, idx[n]]."""
    idx = np.asarray(idx, dtype=np.int64)
    n = np.arange(a.data.shape[0])
    out = Tensor(a.data[n, idx])

    def bwd(g):
        gx = np.zeros_like(a.data)
        gx[n, idx] = g
        return [(a, gx)]

    return _record(out, (a,), bwd)


def add_rowvec(mat: Tensor, vec: Tensor) -> Tensor:
    """Explicit row-broadcast add: (m,n) + (n,) -> (m,n)."""
    if mat.data.ndim != 2 or vec.data.shape != (mat.data.shape[1],):
        raise DimensionError(f"add_rowvec shapes: {mat.data.shape} + {vec.data.shape}")
    out = Tensor(mat.data + vec.data[None, :])

    def bwd(g):
        return [(mat, g), (vec, g.sum(axis=0))]

    return _record(out, (mat, vec), bwd)


def stack_rows(tensors) -> Tensor:
    """Stack equal-length vectors into a matrix."""
    tensors = list(tensors)
    out = Tensor(np.stack([t.data for t in tensors], axis=0))

    def bwd(g):
        return [(t, g[i]) for i, t in enumerate(tensors)]

    return _record(out, tuple(tensors), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Row-wise layer normalization with learned gain and bias."""
    if x.data.ndim != 2 or gain.data.shape != (x.data.shape[1],) or bias.data.shape != (x.data.shape[1],):
        raise DimensionError(
            f"layer_norm shapes: x {x.data.shape}, gain {gain.data.shape}, bias {bias.data.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data[None, :] + bias.data[None, :])

    def bwd(g):
        ggain = (g * xhat).sum(axis=0)
        gbias = g.sum(axis=0)
        gxhat = g * gain.data[None, :]
        m1 = gxhat.mean(axis=1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
        gx = inv * (gxhat - m1 - xhat * m2)
        return [(x, gx), (gain, ggain), (bias, gbias)]

    return _record(out, (x, gain, bias), bwd)
