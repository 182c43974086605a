"""Dataset-level evaluation: per-image metrics, then the arithmetic mean."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..imageio import GT_DIR, RAIN_DIR, DatasetError, dataset_ids, match_pairs, read_png, to_uint8
from ..metrics import MetricsReport
from .inference import derain


def read_u8(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc


def evaluate_dirs(pred_dir, gt_dir, channel: str = "rgb") -> MetricsReport:
    """Score PNGs in ``pred_dir`` against same-named PNGs in ``gt_dir``."""
    report = MetricsReport()
    for i in match_pairs(pred_dir, gt_dir):
        report.add(i, read_u8(Path(pred_dir) / f"{i}.png"), read_u8(Path(gt_dir) / f"{i}.png"), channel)
    return report


def evaluate_model(params, cfg, dataset_dir, tile: int | None = None, overlap: int = 0,
                   channel: str = "rgb") -> MetricsReport:
    """Derain ``dataset_dir/rain`` and score the 8-bit outputs against ``gt``."""
    root = Path(dataset_dir)
    report = MetricsReport()
    for i in dataset_ids(root):
        pred = derain(params, cfg, read_png(root / RAIN_DIR / f"{i}.png"), tile, overlap)
        report.add(i, to_uint8(pred), read_u8(root / GT_DIR / f"{i}.png"), channel)
    return report
