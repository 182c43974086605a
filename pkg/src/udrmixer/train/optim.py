"""Bias-corrected Adam over a flat parameter dict."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..tensor import ShapeError, Tensor


@dataclass
class AdamHyper:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class OptimState:
    """First/second moments per parameter name and the number of steps taken."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Tensor]) -> "OptimState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, 0)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimState,
              hyper: AdamHyper) -> OptimState:
    """Update ``params`` in place and return the advanced state.

    Parameters without a gradient entry (or with ``None``) are treated as
    having zero gradient, so their moments still decay.
    """
    if not state.m:
        state = OptimState.zeros_like(params)
    t = state.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        m, v = state.m[name], state.v[name]
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: shape mismatch for {name}: param {p.shape}, "
                             f"grad {g.shape}, moment {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (hyper.lr / c1) * m / (np.sqrt(v / c2) + hyper.eps)
        p.data -= step.astype(p.data.dtype, copy=False)
    state.t = t
    return state


def collect_grads(params: Mapping[str, Tensor]) -> dict[str, np.ndarray | None]:
    return {k: p.grad for k, p in params.items()}


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
