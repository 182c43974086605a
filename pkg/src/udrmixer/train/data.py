"""Paired patch sampling with shared crops and flips."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PatchSpec:
    """Where a patch came from: crop corner and the flips applied after cropping."""

    y: int
    x: int
    size: int
    flip_h: bool
    flip_v: bool


def draw_patch_spec(h: int, w: int, size: int, rng: np.random.Generator) -> PatchSpec:
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than the {size}x{size} patch")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    flips = rng.random(2) < 0.5
    return PatchSpec(y, x, size, bool(flips[0]), bool(flips[1]))


def apply_patch_spec(img: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Crop an HWC image, then flip horizontally and/or vertically."""
    out = img[spec.y: spec.y + spec.size, spec.x: spec.x + spec.size]
    if spec.flip_h:
        out = out[:, ::-1]
    if spec.flip_v:
        out = out[::-1]
    return np.ascontiguousarray(out)


def sample_patch(rainy: np.ndarray, gt: np.ndarray, size: int, rng: np.random.Generator,
                 return_spec: bool = False):
    """Cut the same window from both images and apply the same flips to both."""
    if rainy.shape != gt.shape:
        raise ValueError(f"pair shapes differ: {rainy.shape} vs {gt.shape}")
    spec = draw_patch_spec(rainy.shape[0], rainy.shape[1], size, rng)
    pair = (apply_patch_spec(rainy, spec), apply_patch_spec(gt, spec))
    return (*pair, spec) if return_spec else pair


def to_batch(images) -> np.ndarray:
    """Stack HWC images into a float32 ``(B, 3, H, W)`` array."""
    return np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2), dtype=np.float32)


def from_batch(batch: np.ndarray) -> list[np.ndarray]:
    return [np.ascontiguousarray(b.transpose(1, 2, 0)) for b in batch]
