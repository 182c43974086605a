"""PNG reading/writing and the paired dataset layout ``root/{rain,gt}/NNNNN.png``."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

RAIN_DIR, GT_DIR = "rain", "gt"


class DatasetError(ValueError):
    pass


def read_png(path) -> np.ndarray:
    """Load an image as float32 HWC RGB in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    return arr / np.float32(255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to 8 bits, rounding halves up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def pair_id(index: int) -> str:
    return f"{index:05d}"


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")


def match_pairs(dir_a, dir_b) -> list[str]:
    """Stems present in both directories; any unpaired stem is an error."""
    a = {p.stem for p in list_images(dir_a)}
    b = {p.stem for p in list_images(dir_b)}
    missing_b, missing_a = sorted(a - b), sorted(b - a)
    if missing_a or missing_b:
        parts = []
        if missing_b:
            parts.append(f"missing in {dir_b}: {', '.join(missing_b)}")
        if missing_a:
            parts.append(f"missing in {dir_a}: {', '.join(missing_a)}")
        raise DatasetError("unpaired files; " + "; ".join(parts))
    return sorted(a)


def dataset_ids(root) -> list[str]:
    root = Path(root)
    for sub in (RAIN_DIR, GT_DIR):
        if not (root / sub).is_dir():
            raise DatasetError(f"dataset {root} has no '{sub}/' directory")
    ids = match_pairs(root / RAIN_DIR, root / GT_DIR)
    if not ids:
        raise DatasetError(f"dataset {root} is empty")
    return ids


def load_dataset(root) -> tuple[list[str], list[np.ndarray], list[np.ndarray]]:
    """Read every pair of a dataset directory into memory."""
    root = Path(root)
    ids = dataset_ids(root)
    rain = [read_png(root / RAIN_DIR / f"{i}.png") for i in ids]
    gt = [read_png(root / GT_DIR / f"{i}.png") for i in ids]
    for i, a, b in zip(ids, rain, gt):
        if a.shape != b.shape:
            raise DatasetError(f"pair {i}: rain {a.shape} and gt {b.shape} differ in size")
    return ids, rain, gt


def ensure_writable(directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise DatasetError(f"output directory {d} is not writable")
    return d
