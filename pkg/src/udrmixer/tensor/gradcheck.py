"""Finite-difference validation of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Tensor


def numerical_grad(fn: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6,
                   indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences of scalar ``fn`` w.r.t. ``x`` (flat ``indices`` only, if given)."""
    flat = x.data.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.zeros(idx.size, dtype=np.float64)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn(x).data)
        flat[i] = orig - eps
        fm = float(fn(x).data)
        flat[i] = orig
        out[n] = (fp - fm) / (2.0 * eps)
    return out


def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6,
               max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between the autodiff and finite-difference gradients.

    ``fn`` must return a scalar tensor and may close over other tensors.
    ``x`` should be float64.  The relative error of entry ``i`` is
    ``|a_i - n_i| / max(|a_i|, |n_i|, 1e-3 * max|n|)``; the floor keeps
    entries that are tiny compared with the rest of the gradient from
    dominating through cancellation noise.  With ``max_entries`` a random
    subset of entries is checked.
    """
    if x.dtype != np.float64:
        raise TypeError("grad_check needs a float64 tensor")
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    fn(x).backward()
    analytic = x.grad.reshape(-1).astype(np.float64)
    x.grad = None
    x.requires_grad = was

    idx = None
    if max_entries is not None and max_entries < analytic.size:
        idx = np.sort(np.random.default_rng(seed).choice(analytic.size, max_entries, replace=False))
    numeric = numerical_grad(fn, x, eps, idx)
    a = analytic if idx is None else analytic[idx]
    floor = max(1e-3 * float(np.max(np.abs(numeric))), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    return float(np.max(np.abs(a - numeric) / denom))
