"""Whole-image and tiled inference on HWC images in [0, 1]."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..model import ModelConfig, udr_mixer_forward
from ..tensor import Tensor
from .data import from_batch, to_batch


def forward_image(params, cfg: ModelConfig, img: np.ndarray) -> np.ndarray:
    """Run the network on one HWC image, reflect-padding to the size multiple it needs."""
    h, w = img.shape[:2]
    d = cfg.divisor
    ph, pw = (-h) % d, (-w) % d
    x = img
    if ph or pw:
        x = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect" if min(h, w) > max(ph, pw) else "edge")
    with T.no_grad():
        out = udr_mixer_forward(Tensor(to_batch([x])), params, cfg).data
    return from_batch(out)[0][:h, :w]


def tile_starts(length: int, tile: int, overlap: int) -> list[int]:
    """Tile origins covering ``[0, length)`` with at least ``overlap`` shared pixels."""
    if length <= tile:
        return [0]
    stride = tile - overlap
    starts = list(range(0, length - tile, stride))
    starts.append(length - tile)
    return starts


def axis_weights(length: int, tile: int, overlap: int) -> list[tuple[int, np.ndarray]]:
    """Per-tile 1-D blend weights along one axis; they sum to 1 at every pixel.

    Each tile gets a linear ramp over its overlapping margin (no ramp at the
    image border); the ramps are then normalized by their pointwise sum.
    """
    starts = tile_starts(length, tile, overlap)
    n = min(tile, length)
    raw = []
    for i, s in enumerate(starts):
        pos = np.arange(n) + 0.5
        w = np.ones(n)
        if overlap > 0:
            if i > 0:
                w = np.minimum(w, pos / overlap)
            if i < len(starts) - 1:
                w = np.minimum(w, (n - pos) / overlap)
        raw.append((s, w))
    total = np.zeros(length)
    for s, w in raw:
        total[s: s + n] += w
    return [(s, w / total[s: s + n]) for s, w in raw]


def check_tiling(cfg: ModelConfig, tile: int, overlap: int) -> None:
    if tile <= 0 or tile % cfg.divisor:
        raise ValueError(f"tile {tile} must be a positive multiple of {cfg.divisor}")
    if not 0 <= overlap < tile / 2:
        raise ValueError(f"overlap {overlap} must satisfy 0 <= overlap < tile/2 = {tile / 2}")


def tiled_inference(params, cfg: ModelConfig, img: np.ndarray, tile: int, overlap: int) -> np.ndarray:
    """Process overlapping ``tile x tile`` crops independently and blend them.

    An image no larger than one tile is passed straight to
    :func:`forward_image`.  Memory grows with the tile, not the image.
    """
    check_tiling(cfg, tile, overlap)
    h, w = img.shape[:2]
    if h <= tile and w <= tile:
        return forward_image(params, cfg, img)
    wy, wx = axis_weights(h, tile, overlap), axis_weights(w, tile, overlap)
    out = np.zeros((h, w, img.shape[2]), dtype=np.float64)
    for y0, ay in wy:
        for x0, ax in wx:
            crop = img[y0: y0 + len(ay), x0: x0 + len(ax)]
            pred = forward_image(params, cfg, crop)
            out[y0: y0 + len(ay), x0: x0 + len(ax)] += pred * (ay[:, None] * ax[None, :])[..., None]
    return out.astype(np.float32)


def derain(params, cfg: ModelConfig, img: np.ndarray, tile: int | None = None,
           overlap: int = 0) -> np.ndarray:
    return forward_image(params, cfg, img) if tile is None else tiled_inference(
        params, cfg, img, tile, overlap)
