"""Synthetic rain: sparse seeds, motion-blur streaks, rescaling, alpha compositing.

Streaks are always rendered on a canvas of fixed reference width and then
resampled to the target width, so their length and thickness stay
proportional to image resolution.  Images are float HWC arrays in [0, 1];
rain layers are float HW arrays in [0, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image
from scipy.signal import fftconvolve

from .imageio import GT_DIR, RAIN_DIR, DatasetError, ensure_writable, pair_id, read_png, write_png
from .tensor import ShapeError


class ImagePair(NamedTuple):
    rainy: np.ndarray
    gt: np.ndarray


def _ordered(name, rng, lo=None, hi=None):
    a, b = rng
    if a > b:
        raise ValueError(f"{name} must be ordered as (low, high), got {rng}")
    if (lo is not None and a < lo) or (hi is not None and b > hi):
        raise ValueError(f"{name} must lie in [{lo}, {hi}], got {rng}")


@dataclass(frozen=True)
class RainConfig:
    """Rain appearance.  Lengths and thickness are in pixels at ``base_width``.

    ``passes`` independent streak layers are composited per image, each
    with its own length, angle and opacity drawn uniformly from the ranges.
    """

    density: float = 0.0015
    length_range: tuple[float, float] = (20.0, 60.0)
    angle_range: tuple[float, float] = (-20.0, 20.0)
    thickness: float = 3.0
    alpha_range: tuple[float, float] = (0.4, 0.8)
    streak_brightness: float = 0.9
    base_width: int = 1024
    passes: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "length_range", tuple(map(float, self.length_range)))
        object.__setattr__(self, "angle_range", tuple(map(float, self.angle_range)))
        object.__setattr__(self, "alpha_range", tuple(map(float, self.alpha_range)))
        if not 0.0 <= self.density <= 1.0:
            raise ValueError(f"density must be in [0, 1], got {self.density}")
        if not 0.0 <= self.streak_brightness <= 1.0:
            raise ValueError("streak_brightness must be in [0, 1]")
        _ordered("length_range", self.length_range, lo=1.0)
        _ordered("angle_range", self.angle_range)
        _ordered("alpha_range", self.alpha_range, 0.0, 1.0)
        if self.thickness < 1:
            raise ValueError("thickness must be >= 1")
        if self.base_width < 1 or self.passes < 0:
            raise ValueError("base_width must be >= 1 and passes >= 0")

    def replace(self, **kw) -> "RainConfig":
        return RainConfig(**{**asdict(self), **kw})

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def motion_blur_kernel(length: float, angle: float, thickness: float = 1.0) -> np.ndarray:
    """Line-segment kernel with a Gaussian cross-section, summing to 1.

    ``angle`` is in degrees from vertical, positive tilting the bottom end
    to the right.  The centre line is rasterized by rounding to the nearest
    pixel; ``thickness`` t gives a Gaussian of sigma ``(t - 1) / 2``, so
    ``t = 1`` is a one-pixel line.
    """
    if length < 1 or thickness < 1:
        raise ValueError(f"length and thickness must be >= 1, got {length}, {thickness}")
    sigma = (thickness - 1.0) / 2.0
    half_len = (length - 1.0) / 2.0
    theta = math.radians(angle)
    dy, dx = math.cos(theta), math.sin(theta)
    radius = int(math.ceil(half_len + 3.0 * sigma))
    size = 2 * radius + 1
    n = max(1, int(math.ceil(4 * length)) + 1)
    t = np.linspace(-half_len, half_len, n)
    ys = np.floor(t * dy + 0.5).astype(int) + radius
    xs = np.floor(t * dx + 0.5).astype(int) + radius
    keep = np.ones(n, bool)
    keep[1:] = (np.diff(ys) != 0) | (np.diff(xs) != 0)
    grid = np.arange(size)
    if sigma > 0:
        prof = lambda c: np.exp(-0.5 * ((grid - c) / sigma) ** 2)
    else:
        prof = lambda c: (grid == c).astype(float)
    # a sum of separable blobs, one per line pixel; swapping the roles of
    # y and x gives the transpose bit-exactly, which a 2-D convolution does not
    k = np.zeros((size, size))
    total = 0.0
    for y, x in zip(ys[keep], xs[keep]):
        py, px = prof(y), prof(x)
        k += np.outer(py, px)
        total += py.sum() * px.sum()
    return k / total


def seed_noise(h: int, w: int, density: float, seed) -> np.ndarray:
    """Bernoulli(density) seed pixels with uniform [0, 1) magnitudes.

    ``seed`` is an int or a ``numpy.random.Generator`` (consumed in place).
    """
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must be in [0, 1], got {density}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = rng.random((h, w)) < density
    mags = rng.random((h, w))
    return np.where(mask, mags, 0.0)


def render_streaks(noise: np.ndarray, kernel: np.ndarray, gain: float = 1.0) -> np.ndarray:
    """Blur seeds along the kernel, scale by ``gain`` and clamp to [0, 1]."""
    out = fftconvolve(noise, kernel, mode="same")
    # transform round-off leaves tiny values where there is no rain at all
    out[np.abs(out) < 1e-12] = 0.0
    return np.clip(out * gain, 0.0, 1.0)


def scale_streak_layer(layer: np.ndarray, s: float, size: tuple[int, int] | None = None) -> np.ndarray:
    """Bilinear resize by factor ``s``; ``size`` (h, w) overrides the rounded target."""
    if s <= 0:
        raise ValueError(f"scale must be positive, got {s}")
    h, w = layer.shape
    th, tw = size if size is not None else (max(1, round(h * s)), max(1, round(w * s)))
    if (th, tw) == (h, w):
        return layer.copy()
    im = Image.fromarray(layer.astype(np.float32), mode="F")
    out = np.asarray(im.resize((tw, th), Image.BILINEAR), dtype=np.float64)
    return np.clip(out, 0.0, 1.0)


def alpha_blend(bg: np.ndarray, rain: np.ndarray, alpha: float,
                streak_brightness: float = 0.9) -> np.ndarray:
    """Composite a rain layer over ``bg`` with per-pixel opacity ``alpha * rain``."""
    if bg.shape[:2] != rain.shape:
        raise ShapeError(f"background {bg.shape[:2]} and rain layer {rain.shape} differ")
    a = (alpha * rain)[..., None] if bg.ndim == 3 else alpha * rain
    out = (1.0 - a) * bg + a * streak_brightness
    return np.clip(out, 0.0, 1.0).astype(bg.dtype, copy=False)


def synthesize_pair(bg: np.ndarray, config: RainConfig, index: int = 0) -> ImagePair:
    """Rainy/clean pair from a background; ``gt`` is ``bg`` itself.

    The random stream is derived from ``(config.seed, index)`` so pairs can
    be produced in any order or in parallel.
    """
    h, w = bg.shape[:2]
    rng = np.random.default_rng([config.seed, index])
    bw = config.base_width
    bh = max(1, round(h * bw / w))
    rainy = bg
    for _ in range(config.passes):
        length = rng.uniform(*config.length_range)
        angle = rng.uniform(*config.angle_range)
        alpha = rng.uniform(*config.alpha_range)
        kernel = motion_blur_kernel(length, angle, config.thickness)
        layer = render_streaks(seed_noise(bh, bw, config.density, rng), kernel, 1.0 / kernel.max())
        layer = scale_streak_layer(layer, w / bw, size=(h, w))
        rainy = alpha_blend(rainy, layer, alpha, config.streak_brightness)
    return ImagePair(rainy=rainy, gt=bg)


def procedural_background(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Stand-in natural-looking background: 1/f colour noise plus a few hard edges."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    amp = 1.0 / np.maximum(np.hypot(fy, fx), 1.0 / max(h, w)) ** 1.6
    img = np.empty((h, w, 3))
    for c in range(3):
        spec = amp * np.exp(2j * np.pi * rng.random(amp.shape))
        field = np.fft.irfft2(spec, s=(h, w))
        img[..., c] = (field - field.mean()) / (field.std() + 1e-12)
    # mostly shared luminance with a weak per-channel tint
    img = 0.8 * img[..., :1] + 0.35 * img
    img = img * 0.1 + rng.uniform(0.25, 0.6, size=3)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(2, 6)):
        nx, ny = rng.normal(size=2)
        side = (xx - rng.uniform(0, w)) * nx + (yy - rng.uniform(0, h)) * ny > 0
        img[side] += rng.uniform(-0.15, 0.15, size=3)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synthesize_dataset(backgrounds: Sequence[np.ndarray], out_dir, count: int,
                       config: RainConfig) -> list[str]:
    """Write ``count`` pairs cycling over ``backgrounds``, plus ``manifest.json``."""
    if not backgrounds:
        raise DatasetError("no background images given")
    out = ensure_writable(out_dir)
    ids = []
    for i in range(count):
        pair = synthesize_pair(backgrounds[i % len(backgrounds)], config, index=i)
        ids.append(pair_id(i))
        write_png(out / RAIN_DIR / f"{ids[-1]}.png", pair.rainy)
        write_png(out / GT_DIR / f"{ids[-1]}.png", pair.gt)
    manifest = {"count": count, "n_backgrounds": len(backgrounds), "rain": asdict(config)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return ids


def load_backgrounds(directory) -> list[np.ndarray]:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"background directory {d} does not exist")
    paths = sorted(p for p in d.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"))
    if not paths:
        raise DatasetError(f"no background images in {d}")
    return [read_png(p) for p in paths]
