"""Dense float64 tensors with a reverse-mode tape.

Forward arithmetic runs on numpy arrays; every differentiable op records its
parents and a backward closure so ``backward`` can push gradients from a
scalar loss to the leaves. Every op output is checked finite (NaN/Inf raises
``NumericsError``). Single-threaded per graph; graphs are independent.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NumericsError",
    "Tensor",
    "no_grad",
    "backward",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "gather_rows",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "relu",
    "exp",
    "log",
    "sqrt",
    "clip",
    "softmax",
    "masked_softmax",
    "layer_norm",
    "linear",
    "dropout",
    "scaled_dot_attention",
]


class NumericsError(RuntimeError):
    """A tensor invariant was violated (non-finite values, malformed graph)."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (used by finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus the tape bookkeeping needed for backward."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_sink")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # method-call form: this runs on every primitive, wrapper dispatch adds up
        if not np.isfinite(arr).all():
            raise NumericsError("non-finite values in tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _grad_enabled
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        # (store, name) for parameter leaves; backward() accumulates there
        self._sink = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self, seed: float = 1.0) -> None:
        backward(self, seed=seed)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add, lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        return _binary(self, other, np.multiply, lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        # domain problems (zero divisor) surface as NumericsError via the
        # finite check, not as numpy warnings
        with np.errstate(divide="ignore", invalid="ignore"):
            return _binary(
                self, other, np.divide, lambda g, a, b: (g / b, -g * a / (b * b))
            )

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out._parents = tuple(parents)
                out._backward_fn = backward_fn
                break
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, grads) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = fwd(a.data, b.data)

    def backward_fn(g: np.ndarray) -> None:
        ga, gb = grads(g, a.data, b.data)
        if a.requires_grad:
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward_fn)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor, seed: float = 1.0) -> None:
    """Reverse-mode sweep from a finite scalar; leaves with a parameter sink
    have their gradients accumulated into the owning store."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data.reshape(())):
        raise NumericsError("loss is non-finite")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.full_like(loss.data, seed)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
    for node in topo:
        if node._sink is not None and node.grad is not None:
            store, name = node._sink
            store.accumulate_grad(name, node.grad)


# -- structural ops ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-d operands or stacked 3-d operands with equal
    leading extent (the multi-head case)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or a.ndim != b.ndim:
        raise ValueError(f"matmul supports matched 2-d or 3-d operands, got {a.shape} @ {b.shape}")
    if a.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ValueError(f"batch extents differ: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"inner extents differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.requires_grad:
            _accumulate(b, np.matmul(a.data.swapaxes(-1, -2), g))

    return _make(data, (a, b), backward_fn)


def transpose(t: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    t = _as_tensor(t)
    data = np.transpose(t.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, np.transpose(g, inverse))

    return _make(data, (t,), backward_fn)


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    t = _as_tensor(t)
    data = t.data.reshape(shape)

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, g.reshape(t.data.shape))

    return _make(data, (t,), backward_fn)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise ValueError("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    extents = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + extents)

    def backward_fn(g: np.ndarray) -> None:
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                _accumulate(part, g[tuple(index)])

    return _make(data, parts, backward_fn)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup (embedding gather); backward scatter-adds into the table."""
    table = _as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ValueError(f"gather_rows expects a 2-d table, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ValueError("row index out of range")
    data = table.data[idx]

    def backward_fn(g: np.ndarray) -> None:
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, g)
            _accumulate(table, gt)

    return _make(data, (table,), backward_fn)


# -- reductions and elementwise ----------------------------------------------


def reduce_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    data = t.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        if axis is None:
            _accumulate(t, np.broadcast_to(g.reshape(()), t.data.shape))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accumulate(t, np.broadcast_to(ge, t.data.shape))

    return _make(np.asarray(data), (t,), backward_fn)


def reduce_mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    n = t.data.size if axis is None else t.data.shape[axis]
    return reduce_sum(t, axis=axis, keepdims=keepdims) * (1.0 / n)


def reduce_max(t: Tensor) -> Tensor:
    """Max over all entries; the gradient routes to the first argmax."""
    t = _as_tensor(t)
    flat = t.data.reshape(-1)
    if flat.size == 0:
        raise ValueError("reduce_max of an empty tensor")
    pos = int(np.argmax(flat))
    data = np.asarray(flat[pos])

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            gt = np.zeros_like(t.data)
            gt.reshape(-1)[pos] = g.reshape(())
            _accumulate(t, gt)

    return _make(data, (t,), backward_fn)


def relu(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    keep = t.data > 0
    data = np.where(keep, t.data, 0.0)

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, g * keep)

    return _make(data, (t,), backward_fn)


def exp(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    data = np.exp(t.data)

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, g * data)

    return _make(data, (t,), backward_fn)


def log(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(t.data)

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, g / t.data)

    return _make(data, (t,), backward_fn)


def sqrt(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    with np.errstate(invalid="ignore"):
        data = np.sqrt(t.data)

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, g * 0.5 / data)

    return _make(data, (t,), backward_fn)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp; zero gradient outside the open interval (lo, hi)."""
    t = _as_tensor(t)
    data = np.clip(t.data, lo, hi)
    inside = (t.data > lo) & (t.data < hi)

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, g * inside)

    return _make(data, (t,), backward_fn)


# -- normalization and attention ----------------------------------------------


def _softmax_forward(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_backward(g: np.ndarray, y: np.ndarray, axis: int) -> np.ndarray:
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis`` (max-subtraction)."""
    t = _as_tensor(t)
    if not -t.ndim <= axis < t.ndim:
        raise ValueError(f"axis {axis} out of range for shape {t.shape}")
    y = _softmax_forward(t.data, axis)

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, _softmax_backward(g, y, axis))

    return _make(y, (t,), backward_fn)


def masked_softmax(t: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax over unmasked positions only; masked positions get weight 0.

    ``mask`` is a boolean array broadcastable to the input; a slice with no
    unmasked position is an error.
    """
    t = _as_tensor(t)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), t.data.shape)
    if not m.any(axis=axis).all():
        raise ValueError("a softmax slice has every position masked")
    neg = np.where(m, t.data, -np.inf)
    shifted = neg - neg.max(axis=axis, keepdims=True)
    e = np.where(m, np.exp(np.where(m, shifted, 0.0)), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, _softmax_backward(g, y, axis))

    return _make(y, (t,), backward_fn)


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis``, then scale and
    shift: out = gain * (x - mu) / sqrt(var + eps) + bias."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    t, gain, bias = _as_tensor(t), _as_tensor(gain), _as_tensor(bias)
    axis = axis if axis >= 0 else t.ndim + axis
    extent = t.shape[axis]
    if gain.shape != (extent,) or bias.shape != (extent,):
        raise ValueError(
            f"gain/bias must have shape ({extent},) for axis {axis}, got {gain.shape}/{bias.shape}"
        )

    x = np.moveaxis(t.data, axis, -1)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = np.moveaxis(gain.data * xhat + bias.data, -1, axis)

    def backward_fn(g: np.ndarray) -> None:
        gm = np.moveaxis(g, axis, -1)
        lead = tuple(range(gm.ndim - 1))
        if bias.requires_grad:
            _accumulate(bias, gm.sum(axis=lead))
        if gain.requires_grad:
            _accumulate(gain, (gm * xhat).sum(axis=lead))
        if t.requires_grad:
            gh = gm * gain.data
            gx = inv * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
            _accumulate(t, np.moveaxis(gx, -1, axis))

    return _make(out, (t, gain, bias), backward_fn)


def linear(t: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: out = t @ weight (+ bias)."""
    t, weight = _as_tensor(t), _as_tensor(weight)
    if weight.ndim != 2 or t.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear shape mismatch: {t.shape} @ {weight.shape}")
    data = np.matmul(t.data, weight.data)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ValueError(f"bias shape {bias.shape} != ({weight.shape[1]},)")
        data = data + bias.data
    parents = (t, weight) if bias is None else (t, weight, bias)

    def backward_fn(g: np.ndarray) -> None:
        if t.requires_grad:
            _accumulate(t, np.matmul(g, weight.data.T))
        if weight.requires_grad:
            x2 = t.data.reshape(-1, t.shape[-1])
            g2 = g.reshape(-1, weight.shape[1])
            _accumulate(weight, x2.T @ g2)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.reshape(-1, weight.shape[1]).sum(axis=0))

    return _make(data, parents, backward_fn)


def dropout(t: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate == 0.0:
        return _as_tensor(t)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    t = _as_tensor(t)
    keep = (rng.random(t.shape) >= rate) / (1.0 - rate)
    return t * Tensor(keep)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask) -> Tensor:
    """Query-conditioned key-value attention with masked keys excluded.

    q: (n_q, d_k), k: (n_k, d_k), v: (n_k, d_v), key_mask: booleans of length
    n_k (True = attend). Also accepts stacked (h, ., .) operands for the
    multi-head case. At least one key must be unmasked.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value counts differ: {k.shape} vs {v.shape}")
    mask = np.asarray(key_mask, dtype=bool)
    if mask.shape[-1] != k.shape[-2]:
        raise ValueError(f"mask length {mask.shape[-1]} != key count {k.shape[-2]}")
    if not mask.any():
        raise ValueError("all keys are masked")
    d_k = q.shape[-1]
    axes = (0, 2, 1) if k.ndim == 3 else (1, 0)
    logits = matmul(q, transpose(k, axes)) * (1.0 / math.sqrt(d_k))
    weights = masked_softmax(logits, mask, axis=-1)
    return matmul(weights, v)
