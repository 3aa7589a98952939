"""Dense-tensor numerical core with reverse-mode automatic differentiation.

Values are float64 numpy arrays in row-major layout (the single canonical
layout; feature reshaping depends on it). Every operation builds a node in a
dynamic graph; ``backward`` walks the graph in reverse topological order and
accumulates gradients on all tensors flagged ``requires_grad``. Operations
are deterministic given identical inputs; dropout takes an explicit random
generator.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backprop: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor],
          backprop: Callable[[np.ndarray], None]) -> Tensor:
    """Build an output node; the graph edge is dropped under no_grad."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backprop = backprop
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor
    with ``requires_grad``. The loss must be a scalar.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backprop(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backprop)


def neg(a: Tensor) -> Tensor:
    def backprop(g: np.ndarray) -> None:
        a._accumulate(-g)

    return _make(-a.data, (a,), backprop)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backprop(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backprop)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backprop(g: np.ndarray) -> None:
        a._accumulate(g * s)

    return _make(a.data * s, (a,), backprop)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 2:
        raise ValueError(f"matmul needs matrix-like operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backprop(g: np.ndarray) -> None:
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.outer(a.data, g)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), backprop)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backprop(g: np.ndarray) -> None:
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backprop)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backprop(g: np.ndarray) -> None:
        a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backprop)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def backprop(g: np.ndarray) -> None:
        a._accumulate(g * keep)

    return _make(np.where(keep, a.data, 0.0), (a,), backprop)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backprop(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), backprop)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: output[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError("embedding ids out of range")
    data = table.data[ids]

    def backprop(g: np.ndarray) -> None:
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(gt)

    return _make(data, (table,), backprop)


def dropout(a: Tensor, rate: float, rng: np.random.Generator,
            training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backprop(g: np.ndarray) -> None:
        a._accumulate(g * keep)

    return _make(a.data * keep, (a,), backprop)


# ---------------------------------------------------------------------------
# fused operations with hand-written adjoints
# ---------------------------------------------------------------------------

def softmax(logits: Tensor) -> Tensor:
    """Shift-stable softmax along the last axis.

    Rejects empty and NaN input; outputs are nonnegative and each row sums
    to 1 within 1e-6.
    """
    x = logits.data
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("softmax of empty input is undefined")
    if np.isnan(x).any():
        raise ValueError("softmax input contains NaN")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    w = e / e.sum(axis=-1, keepdims=True)

    def backprop(g: np.ndarray) -> None:
        inner = (g * w).sum(axis=-1, keepdims=True)
        logits._accumulate(w * (g - inner))

    return _make(w, (logits,), backprop)


def masked_softmax(scores: Tensor, allow: np.ndarray) -> Tensor:
    """Softmax along the last axis restricted to positions where ``allow``
    is True; forbidden positions get exactly 0 weight.

    ``allow`` must broadcast against ``scores``. A row with every position
    forbidden has no defined distribution and raises ValueError.
    """
    x = scores.data
    if np.isnan(x).any():
        raise ValueError("attention scores contain NaN")
    allow = np.broadcast_to(np.asarray(allow, dtype=bool), x.shape)
    if not allow.any(axis=-1).all():
        raise ValueError("attention row with all positions forbidden")
    neg_inf = np.where(allow, x, -np.inf)
    shifted = neg_inf - neg_inf.max(axis=-1, keepdims=True)
    e = np.where(allow, np.exp(shifted), 0.0)
    w = e / e.sum(axis=-1, keepdims=True)

    def backprop(g: np.ndarray) -> None:
        inner = (g * w).sum(axis=-1, keepdims=True)
        scores._accumulate(w * (g - inner))

    return _make(w, (scores,), backprop)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and
    shift: out = gain * (x - mu) / sqrt(var + eps) + bias.

    Variance is the population variance (divide by the axis length). gain
    and bias must match the last axis of x; eps must be positive.
    """
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be > 0, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layer_norm gain/bias must have shape ({d},), "
            f"got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gain.data * xhat + bias.data

    def backprop(g: np.ndarray) -> None:
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx - m1 - xhat * m2))

    return _make(data, (x, gain, bias), backprop)


def cross_entropy(logits: Tensor, targets, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under softmax(logits).

    ``logits`` has shape (..., V); ``targets`` holds integer class indices of
    shape (...) (a bare int for a single V-vector). ``mask`` optionally
    selects which positions count; excluded positions contribute neither to
    the mean nor to the gradient. Raises on out-of-range targets.
    """
    targets = np.asarray(targets)
    v = logits.shape[-1]
    if logits.data.ndim == 1:
        if targets.shape != ():
            raise ValueError("scalar target expected for a single logits vector")
    elif targets.shape != logits.shape[:-1]:
        raise ValueError(
            f"targets shape {targets.shape} does not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise ValueError(f"target index out of range for vocabulary of {v}")

    if mask is None:
        mask_arr = np.ones(targets.shape, dtype=bool)
    else:
        mask_arr = np.asarray(mask, dtype=bool)
        if mask_arr.shape != targets.shape:
            raise ValueError("mask shape must match targets shape")
    count = int(mask_arr.sum())
    if count == 0:
        raise ValueError("cross_entropy with no counted positions")

    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(
        logp.reshape(-1, v), targets.reshape(-1, 1), axis=1).reshape(targets.shape)
    loss = -(picked * mask_arr).sum() / count

    def backprop(g: np.ndarray) -> None:
        probs = np.exp(logp)
        onehot = np.zeros_like(probs.reshape(-1, v))
        onehot[np.arange(targets.size), targets.reshape(-1)] = 1.0
        d = (probs.reshape(-1, v) - onehot) * mask_arr.reshape(-1, 1)
        logits._accumulate(float(g) / count * d.reshape(logits.shape))

    return _make(np.asarray(loss), (logits,), backprop)


def scaled_dot_attention(queries: Tensor, keys: Tensor, values: Tensor,
                         mask: Optional[np.ndarray] = None
                         ) -> tuple[Tensor, Tensor]:
    """Attention(Q, K, V) with 1/sqrt(d) scaling.

    Shapes: queries (..., L_q, d), keys (..., L_k, d), values (..., L_k, d_v).
    ``mask`` is a boolean allow-mask broadcastable to (..., L_q, L_k); True
    means the position may be attended to. Returns (output, weights) where
    each weight row sums to 1 and forbidden positions carry exactly 0.
    """
    if queries.shape[-1] != keys.shape[-1]:
        raise ValueError(
            f"query/key dimensions disagree: {queries.shape} vs {keys.shape}")
    if keys.shape[-2] != values.shape[-2]:
        raise ValueError(
            f"key/value row counts disagree: {keys.shape} vs {values.shape}")
    d = queries.shape[-1]
    scores = scale(matmul(queries, transpose(keys, _swap_last(keys.ndim))),
                   1.0 / math.sqrt(d))
    if mask is None:
        weights = softmax(scores)
    else:
        weights = masked_softmax(scores, mask)
    return matmul(weights, values), weights


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
