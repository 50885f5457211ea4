"""Named parameter store, AdamW with decoupled decay, finite-difference checks."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named parameter tensors plus AdamW moment state and a step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.asarray(data)
        if arr.dtype != np.float64:  # f32 for training, f64 kept for oracle checks
            arr = arr.astype(np.float32)
        t = Tensor(arr, requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def subset(self, prefix: str) -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]


def adamw_step(store: ParamStore, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0, names=None) -> None:
    """One AdamW update over `names` (default: every parameter with a grad set).

    Decoupled weight decay is applied first, then the bias-corrected Adam
    moment update. Updating a named parameter without a gradient is a
    contract error.
    """
    beta1, beta2 = betas
    if names is None:
        names = [n for n, t in store.params.items() if t.grad is not None]
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in names:
        if name not in store.params:
            raise KeyError(f"unknown parameter {name!r}")
        p = store.params[name]
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        g = p.grad
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
        if weight_decay != 0.0:
            p.data -= (lr * weight_decay) * p.data
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)


def grad_check(fn, points: list[np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` takes a list of Tensors (built from f64 copies of `points`) and
    returns a scalar Tensor. Returns max over all coordinates of
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    tensors = [Tensor(np.asarray(p, dtype=np.float64), requires_grad=True) for p in points]
    out = fn(tensors)
    out.backward()
    worst = 0.0
    for ti, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn([Tensor(x.data) for x in tensors]).data)
            flat[i] = orig - h
            fm = float(fn([Tensor(x.data) for x in tensors]).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite value at input {ti}, coordinate {i}")
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
