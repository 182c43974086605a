"""Mixing layers and blocks of the deraining network.

Parameters live in a flat ``dict[str, Tensor]`` keyed by hierarchical
names; every function here takes that dict and the prefix of the layer it
evaluates.
"""

from __future__ import annotations

from typing import Mapping

from .. import tensor as T
from ..tensor import Tensor

Params = Mapping[str, Tensor]


def conv(x: Tensor, params: Params, name: str, stride: int = 1) -> Tensor:
    return T.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride)


def norm(x: Tensor, params: Params, name: str, eps: float = 1e-5) -> Tensor:
    return T.layer_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"], eps)


def sfrl_stage_names(stages: int) -> list[str]:
    """Mixing layers of a rearrangement layer with ``stages`` stages.

    The GELU path has ``stages - 1`` rotate-and-mix steps; the sigmoid
    gate is always present.
    """
    return [f"gelu{k}" for k in range(stages - 1)] + ["gate"]


def sfrl_forward(f0: Tensor, params: Params, prefix: str, stages: int = 3) -> Tensor:
    """Spatial feature rearrangement.

    The input is resampled to an ``S x S`` grid with ``S = C`` so the
    feature map is a cube and every axis rotation keeps its shape.  Each GELU
    stage mixes along the current leading axis and rotates; the gate mixes
    the resampled input once, applies a sigmoid and rotates.  Their sum is
    resampled back and multiplies the input.
    """
    b, c, h, w = f0.shape
    f = T.interpolate_bilinear(f0, c, c)
    gate = T.rotate_axes(T.sigmoid(conv(f, params, f"{prefix}.gate")))
    mixed = gate
    if stages > 1:
        g = f
        for k in range(stages - 1):
            g = T.rotate_axes(T.gelu(conv(g, params, f"{prefix}.gelu{k}")))
        mixed = g + gate
    return T.interpolate_bilinear(mixed, h, w) * f0


def ffl_forward(f0: Tensor, params: Params, prefix: str) -> Tensor:
    """3x3 expansion, GELU, 1x1 reduction back to the input width."""
    return conv(T.gelu(conv(f0, params, f"{prefix}.expand")), params, f"{prefix}.reduce")


def ffml_forward(f0: Tensor, params: Params, prefix: str) -> Tensor:
    """Frequency feature modulation.

    Real and imaginary parts of the half spectrum are stacked as ``2C``
    channels, mixed by two 1x1 layers with a ReLU in between, and
    transformed back.  Working on the half spectrum keeps the edited
    spectrum Hermitian, so the inverse is exactly real.
    """
    width = f0.shape[-1]
    spec = T.complex_to_channels(T.rfft2(f0))
    spec = conv(T.relu(conv(spec, params, f"{prefix}.mix1")), params, f"{prefix}.mix2")
    f = T.irfft2(T.channels_to_complex(spec), width)
    return f * f0


def sfmb_forward(x: Tensor, params: Params, prefix: str, stages: int = 3,
                 eps: float = 1e-5) -> Tensor:
    x = x + sfrl_forward(norm(x, params, f"{prefix}.ln1", eps), params, f"{prefix}.sfrl", stages)
    return x + ffl_forward(norm(x, params, f"{prefix}.ln2", eps), params, f"{prefix}.ffl")


def ffmb_forward(y: Tensor, params: Params, prefix: str, eps: float = 1e-5) -> Tensor:
    y = y + ffml_forward(norm(y, params, f"{prefix}.ln1", eps), params, f"{prefix}.ffml")
    return y + ffl_forward(norm(y, params, f"{prefix}.ln2", eps), params, f"{prefix}.ffl")
