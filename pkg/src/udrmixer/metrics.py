"""Full-reference image quality metrics and a histogram KL divergence.

All metrics work on the 8-bit scale: inputs are HWC (or HW) arrays with
values in [0, 255], integer or float.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def to_luma(img: np.ndarray) -> np.ndarray:
    """BT.601 studio-range luma of an RGB image on the 8-bit scale."""
    img = np.asarray(img, dtype=np.float64)
    return 16.0 + (65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2]) / 255.0


def _select(a, b, channel):
    if channel == "rgb":
        return a, b
    if channel == "y":
        return to_luma(a), to_luma(b)
    raise ValueError(f"channel must be 'rgb' or 'y', got {channel!r}")


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, channel: str = "rgb") -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``PSNR_CAP_DB``."""
    a, b = _select(*_pair(a, b), channel)
    m = float(np.mean((a - b) ** 2))
    if m == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0 ** 2 / m))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation over the fully overlapping region of an HW array."""
    rows = sliding_window_view(img, g.size, axis=1) @ g
    return sliding_window_view(rows, g.size, axis=0) @ g


def _ssim_plane(x, y, g, c1, c2):
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, channel: str = "rgb") -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Statistics are taken over windows fully inside the image; RGB inputs are
    scored per channel and averaged unless ``channel="y"``.
    """
    a, b = _select(*_pair(a, b), channel)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    g = gaussian_window()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    if a.ndim == 2:
        return _ssim_plane(a, b, g, c1, c2)
    return float(np.mean([_ssim_plane(a[..., c], b[..., c], g, c1, c2) for c in range(a.shape[-1])]))


def kld(p, q, eps: float = 1e-8) -> float:
    """KL divergence in nats between two histograms (counts or probabilities)."""
    p = np.asarray(p, dtype=np.float64) + eps
    q = np.asarray(q, dtype=np.float64) + eps
    if p.shape != q.shape:
        raise ShapeError(f"histogram sizes differ: {p.shape} vs {q.shape}")
    p, q = p / p.sum(), q / q.sum()
    return max(0.0, float(np.sum(p * np.log(p / q))))


def pooled_histogram(images: Iterable[np.ndarray], bins: int = 256) -> np.ndarray:
    hist = np.zeros(bins)
    for img in images:
        h, _ = np.histogram(np.asarray(img, dtype=np.float64), bins=bins, range=(0.0, 255.0))
        hist += h
    return hist


def histogram_kld(set_p: Sequence[np.ndarray], set_q: Sequence[np.ndarray], bins: int = 256,
                  eps: float = 1e-8) -> float:
    """KL(P || Q) between the pooled intensity histograms of two image sets."""
    if len(set_p) == 0 or len(set_q) == 0:
        raise ValueError("both image sets must be nonempty")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    return kld(pooled_histogram(set_p, bins), pooled_histogram(set_q, bins), eps)


@dataclass
class MetricRecord:
    id: str
    psnr: float
    ssim: float
    mse: float


@dataclass
class MetricsReport:
    records: list[MetricRecord] = field(default_factory=list)

    def add(self, image_id: str, pred, gt, channel: str = "rgb") -> MetricRecord:
        rec = MetricRecord(image_id, psnr(pred, gt, channel), ssim(pred, gt, channel), mse(pred, gt))
        self.records.append(rec)
        return rec

    def mean(self) -> MetricRecord:
        if not self.records:
            raise ValueError("empty report")
        n = len(self.records)
        return MetricRecord("MEAN", sum(r.psnr for r in self.records) / n,
                            sum(r.ssim for r in self.records) / n,
                            sum(r.mse for r in self.records) / n)

    def rows(self) -> list[MetricRecord]:
        return self.records + [self.mean()]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "psnr", "ssim", "mse"])
            for r in self.rows():
                w.writerow([r.id, repr(r.psnr), repr(r.ssim), repr(r.mse)])

    @classmethod
    def read_csv(cls, path) -> "MetricsReport":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([MetricRecord(r["id"], float(r["psnr"]), float(r["ssim"]), float(r["mse"]))
                    for r in rows if r["id"] != "MEAN"])
