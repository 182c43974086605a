"""Closed-form parameter and FLOP accounting.

Convolutions cost ``C_out*C_in*k^2 + C_out`` parameters and
``2*C_in*C_out*k^2*H_out*W_out`` FLOPs; every 2-D FFT (forward or inverse)
costs ``5*H*W*log2(H*W)`` FLOPs per channel, and a real (half-spectrum)
transform half of that.  Normalization, activations,
resampling and elementwise products are not counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import ModelConfig

REFERENCE_PARAMS_M = 4.90
REFERENCE_FLOPS_G = 200.1


@dataclass
class LayerCost:
    name: str
    params: int
    flops: int


@dataclass
class ComplexityReport:
    height: int
    width: int
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    def add(self, name: str, params: int = 0, flops: int = 0) -> None:
        self.layers.append(LayerCost(name, int(params), int(flops)))

    def format(self, reference: bool = True) -> str:
        rows = [f"{'layer':<36}{'params':>12}{'FLOPs':>18}"]
        rows += [f"{l.name:<36}{l.params:>12,}{l.flops:>18,}" for l in self.layers]
        rows.append(f"{'TOTAL':<36}{self.total_params:>12,}{self.total_flops:>18,}")
        rows.append(f"params {self.total_params / 1e6:.3f} M, FLOPs {self.total_flops / 1e9:.2f} G "
                    f"at {self.height}x{self.width}")
        if reference:
            rows.append(f"reference: {REFERENCE_PARAMS_M:.2f} M params, {REFERENCE_FLOPS_G:.1f} G FLOPs "
                        "at 1024x1024")
        return "\n".join(rows)


def _conv(rep, name, cin, cout, k, ho, wo):
    rep.add(name, cout * cin * k * k + cout, 2 * cin * cout * k * k * ho * wo)


def _fft_flops(c, h, w) -> int:
    n = h * w
    return round(5 * n * math.log2(n) * c) if n > 1 else 0


def _sfmb(rep, prefix, c, h, w, cfg: ModelConfig):
    rep.add(f"{prefix}.ln1", 2 * c)
    s = c
    n_mix = cfg.sfrl_stages
    # each stage is a 1x1 S->S layer over an S x S grid
    rep.add(f"{prefix}.sfrl", n_mix * (s * s + s), n_mix * 2 * s ** 4)
    rep.add(f"{prefix}.ln2", 2 * c)
    e = cfg.ffl_expand * c
    _conv(rep, f"{prefix}.ffl.expand", c, e, 3, h, w)
    _conv(rep, f"{prefix}.ffl.reduce", e, c, 1, h, w)


def _ffmb(rep, prefix, c, h, w, cfg: ModelConfig):
    rep.add(f"{prefix}.ln1", 2 * c)
    # forward and inverse real transforms; mixing runs on the half spectrum
    rep.add(f"{prefix}.ffml.fft", 0, _fft_flops(c, h, w))
    wf = w // 2 + 1
    _conv(rep, f"{prefix}.ffml.mix1", 2 * c, 2 * c, 1, h, wf)
    _conv(rep, f"{prefix}.ffml.mix2", 2 * c, 2 * c, 1, h, wf)
    rep.add(f"{prefix}.ln2", 2 * c)
    e = cfg.ffl_expand * c
    _conv(rep, f"{prefix}.ffl.expand", c, e, 3, h, w)
    _conv(rep, f"{prefix}.ffl.reduce", e, c, 1, h, w)


def complexity_report(cfg: ModelConfig, height: int = 1024, width: int = 1024) -> ComplexityReport:
    c, c2, r = cfg.c_main, cfg.c_level2, cfg.r
    rep = ComplexityReport(height, width)
    h1, w1 = height // r, width // r
    h2, w2 = h1 // 2, w1 // 2

    _conv(rep, "embed", 3, c, 3, height, width)
    _conv(rep, "proj_in", c * r * r, c, 1, h1, w1)
    for i in range(cfg.n1):
        _sfmb(rep, f"enc1.{i}", c, h1, w1, cfg)
    _conv(rep, "down", c, c2, 3, h2, w2)
    for i in range(cfg.n2):
        _sfmb(rep, f"enc2.{i}", c2, h2, w2, cfg)
    _conv(rep, "up", c2, 4 * c, 3, h2, w2)
    if cfg.aux_blocks:
        _conv(rep, "aux.embed", 3, cfg.c_aux, 3, height, width)
        for i in range(cfg.aux_blocks):
            _ffmb(rep, f"aux.{i}", cfg.c_aux, height, width, cfg)
        _conv(rep, "aux.proj", cfg.c_aux * r * r, c, 1, h1, w1)
    for i in range(cfg.n3):
        _sfmb(rep, f"dec.{i}", c, h1, w1, cfg)
    _conv(rep, "out", c, 3 * r * r, 3, h1, w1)
    return rep


def count_params(cfg: ModelConfig) -> int:
    return complexity_report(cfg, 2 * cfg.r, 2 * cfg.r).total_params


def estimate_flops(cfg: ModelConfig, height: int, width: int) -> int:
    return complexity_report(cfg, height, width).total_flops
