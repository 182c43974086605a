"""Dual-branch network assembly, parameter initialization and loss."""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..tensor import ShapeError, Tensor
from .config import ModelConfig
from .layers import Params, conv, ffmb_forward, sfmb_forward, sfrl_stage_names

ModelParams = dict  # str -> Tensor, insertion-ordered


def _conv_shapes(name: str, cout: int, cin: int, k: int):
    yield f"{name}.weight", (cout, cin, k, k)
    yield f"{name}.bias", (cout,)


def _norm_shapes(name: str, c: int):
    yield f"{name}.gamma", (c,)
    yield f"{name}.beta", (c,)


def _ffl_shapes(prefix: str, c: int, expand: int):
    yield from _conv_shapes(f"{prefix}.expand", expand * c, c, 3)
    yield from _conv_shapes(f"{prefix}.reduce", c, expand * c, 1)


def _sfmb_shapes(prefix: str, c: int, cfg: ModelConfig):
    yield from _norm_shapes(f"{prefix}.ln1", c)
    for stage in sfrl_stage_names(cfg.sfrl_stages):
        yield from _conv_shapes(f"{prefix}.sfrl.{stage}", c, c, 1)
    yield from _norm_shapes(f"{prefix}.ln2", c)
    yield from _ffl_shapes(f"{prefix}.ffl", c, cfg.ffl_expand)


def _ffmb_shapes(prefix: str, c: int, cfg: ModelConfig):
    yield from _norm_shapes(f"{prefix}.ln1", c)
    yield from _conv_shapes(f"{prefix}.ffml.mix1", 2 * c, 2 * c, 1)
    yield from _conv_shapes(f"{prefix}.ffml.mix2", 2 * c, 2 * c, 1)
    yield from _norm_shapes(f"{prefix}.ln2", c)
    yield from _ffl_shapes(f"{prefix}.ffl", c, cfg.ffl_expand)


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of every learnable tensor, in a stable order."""
    c, c2, r = cfg.c_main, cfg.c_level2, cfg.r
    out = []
    out += _conv_shapes("embed", c, 3, 3)
    out += _conv_shapes("proj_in", c, c * r * r, 1)
    for i in range(cfg.n1):
        out += _sfmb_shapes(f"enc1.{i}", c, cfg)
    out += _conv_shapes("down", c2, c, 3)
    for i in range(cfg.n2):
        out += _sfmb_shapes(f"enc2.{i}", c2, cfg)
    out += _conv_shapes("up", 4 * c, c2, 3)
    if cfg.aux_blocks:
        out += _conv_shapes("aux.embed", cfg.c_aux, 3, 3)
        for i in range(cfg.aux_blocks):
            out += _ffmb_shapes(f"aux.{i}", cfg.c_aux, cfg)
        out += _conv_shapes("aux.proj", c, cfg.c_aux * r * r, 1)
    for i in range(cfg.n3):
        out += _sfmb_shapes(f"dec.{i}", c, cfg)
    out += _conv_shapes("out", 3 * r * r, c, 3)
    return out


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Fan-in scaled uniform convolutions; LayerNorm starts at identity."""
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    fan_in: dict[str, int] = {}
    for name, shape in param_shapes(cfg):
        layer, kind = name.rsplit(".", 1)
        if kind == "weight":
            fan_in[layer] = int(np.prod(shape[1:]))
            bound = 1.0 / math.sqrt(fan_in[layer])
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "bias":
            bound = 1.0 / math.sqrt(fan_in[layer])
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "gamma":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


def check_input_shape(shape, cfg: ModelConfig) -> None:
    if len(shape) != 4 or shape[1] != 3:
        raise ShapeError(f"expected input of shape (B, 3, H, W), got {shape}")
    h, w = shape[2:]
    d = cfg.divisor
    if h % d or w % d:
        raise ShapeError(f"input size {h}x{w} must be divisible by {d} (2*r with r={cfg.r})")


def udr_mixer_forward(x: Tensor, params: Params, cfg: ModelConfig) -> Tensor:
    """Map a rainy batch ``(B, 3, H, W)`` to a derained batch of the same shape."""
    check_input_shape(x.shape, cfg)
    st, eps = cfg.sfrl_stages, cfg.ln_eps

    feat = conv(T.pixel_unshuffle(conv(x, params, "embed"), cfg.r), params, "proj_in")
    for i in range(cfg.n1):
        feat = sfmb_forward(feat, params, f"enc1.{i}", st, eps)
    skip = feat
    feat = conv(feat, params, "down", stride=2)
    for i in range(cfg.n2):
        feat = sfmb_forward(feat, params, f"enc2.{i}", st, eps)
    feat = T.pixel_shuffle(conv(feat, params, "up"), 2) + skip

    if cfg.aux_blocks:
        aux = conv(x, params, "aux.embed")
        for i in range(cfg.aux_blocks):
            aux = ffmb_forward(aux, params, f"aux.{i}", eps)
        feat = feat + conv(T.pixel_unshuffle(aux, cfg.r), params, "aux.proj")

    for i in range(cfg.n3):
        feat = sfmb_forward(feat, params, f"dec.{i}", st, eps)
    out = T.pixel_shuffle(conv(feat, params, "out"), cfg.r)
    if cfg.global_residual:
        out = out + x
    return out


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over every element."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    return T.mean(T.abs_(pred - target))
