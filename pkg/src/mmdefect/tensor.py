"""Minimal reverse-mode autodiff over dense numpy arrays.

Only the kernels the model needs: elementwise arithmetic with broadcasting,
matmul, relu/sigmoid/exp/log/sqrt, reductions, reshape/transpose/concat,
last-axis softmax, embedding lookup, strided 3x3 convolution, and a fused
softmax cross-entropy. Every kernel checks its output for NaN/Inf (toggle
with `set_finite_checks`); a non-finite value is a contract violation, not
a warning.
"""

from __future__ import annotations

import numpy as np

_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class ShapeError(ValueError):
    pass


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite value produced by {op}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _init_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._init_grad()
        self.grad = self.grad + np.asarray(grad, dtype=self.data.dtype)
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t._init_grad()
        t.grad += g.astype(t.data.dtype, copy=False)


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    data = a.data ** exponent

    def backward(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward, "power")


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _make(data, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(data, (a,), backward, "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _make(data, (a,), backward, "relu")


def sigmoid(a) -> Tensor:
    """Elementwise logistic; computed branch-free stably, output in (0,1)."""
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    # saturation clamps into the open interval (0, 1)
    one = x.dtype.type(1.0)
    data = np.clip(data, np.nextafter(x.dtype.type(0.0), one), np.nextafter(one, x.dtype.type(0.0)))

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner extents differ: {a.data.shape} vs {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if b.data.ndim > 1 else np.outer(g, b.data).reshape(a.data.shape)
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if a.data.ndim > 1 else np.outer(a.data, g).reshape(b.data.shape)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward, "matmul")


# -- reductions / shaping --------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    data = np.transpose(a.data, axes)

    def backward(g):
        inv = None if axes is None else np.argsort(axes)
        _accum(a, np.transpose(g, inv))

    return _make(data, (a,), backward, "transpose")


def swap_last(a) -> Tensor:
    """Transpose the last two axes (K^T in attention)."""
    a = as_tensor(a)
    data = np.swapaxes(a.data, -1, -2)

    def backward(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(data, (a,), backward, "swap_last")


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        splits = np.cumsum(sizes)[:-1]
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(data, tuple(tensors), backward, "concat")


def narrow(a, axis, start, length) -> Tensor:
    """Contiguous slice along one axis."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(data, (a,), backward, "narrow")


# -- model kernels ---------------------------------------------------------


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    a = as_tensor(a)
    if a.data.ndim < 1 or a.data.shape[-1] < 1:
        raise ShapeError(f"softmax_rows needs a nonempty last axis, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, data * (g - dot))

    return _make(data, (a,), backward, "softmax_rows")


def cross_entropy(logits, targets) -> Tensor:
    """Mean over rows of -sum(target * log_softmax(logit)).

    `targets` is a constant array of per-row probability distributions.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ShapeError(f"targets shape {t.shape} != logits shape {logits.data.shape}")
    rowsums = t.sum(axis=-1)
    if np.any(np.abs(rowsums - 1.0) > 1e-6):
        raise ValueError("cross_entropy target rows must sum to 1 within 1e-6")
    x = logits.data.astype(np.float64)
    xmax = x.max(axis=-1, keepdims=True)
    lse = xmax + np.log(np.exp(x - xmax).sum(axis=-1, keepdims=True))
    logp = x - lse
    m = int(np.prod(x.shape[:-1]))
    data = np.asarray(-(t * logp).sum() / m, dtype=logits.data.dtype)
    p = np.exp(logp)

    def backward(g):
        _accum(logits, (float(g) / m) * (p - t))

    return _make(data, (logits,), backward, "cross_entropy")


def embedding(table, ids) -> Tensor:
    """Row lookup: table (V, d), ids int array -> (ids.shape, d)."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"token id out of range [0, {table.data.shape[0]})")
    data = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        _accum(table, full)

    return _make(data, (table,), backward, "embedding")


def conv2d(x, w, b, stride: int = 2) -> Tensor:
    """3x3 convolution, padding 1. x: (B,C,H,W), w: (O,C,3,3), b: (O,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    B, C, H, W = x.data.shape
    O = w.data.shape[0]
    if w.data.shape[1] != C:
        raise ShapeError(f"conv2d channel mismatch: input {C}, kernel {w.data.shape[1]}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, 3, 3)
    data = np.einsum("bchwij,ocij->bohw", win, w.data, optimize=True) + b.data[None, :, None, None]
    data = data.astype(x.data.dtype)
    Ho, Wo = data.shape[2], data.shape[3]

    def backward(g):
        _accum(w, np.einsum("bchwij,bohw->ocij", win, g, optimize=True))
        _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for ki in range(3):
                for kj in range(3):
                    # each kernel tap scatters back onto a strided slab
                    contrib = np.einsum("bohw,oc->bchw", g, w.data[:, :, ki, kj], optimize=True)
                    gxp[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += contrib
            _accum(x, gxp[:, :, 1:1 + H, 1:1 + W])

    return _make(data, (x, w, b), backward, "conv2d")


# -- non-graph helpers -----------------------------------------------------


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of two vectors; zero-norm input is an error (hides collapse)."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ShapeError(f"cosine_similarity shapes differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine_similarity: zero-norm input is degenerate")
    return float(np.dot(u, v) / (nu * nv))


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Differentiable unit-norm along the last axis."""
    sq = tsum(mul(a, a), axis=-1, keepdims=True)
    return mul(a, power(add(sq, eps), -0.5))
