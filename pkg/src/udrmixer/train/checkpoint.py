"""Little-endian binary checkpoints.

Layout::

    b"UDRM"  u32 version
    u32 blob_len, blob (UTF-8 JSON: model config, training metadata, RNG state)
    u32 n_records
    n_records x [u32 name_len, name (UTF-8), u8 dtype code, u8 rank, u64 dims[rank], raw data]

Records are named ``param/<name>``, ``adam.m/<name>`` and ``adam.v/<name>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import ModelConfig, param_shapes
from ..tensor import Tensor

MAGIC = b"UDRM"
VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1"),
           5: np.dtype("<i4")}
_CODES = {dt: code for code, dt in _DTYPES.items()}

PARAM, ADAM_M, ADAM_V = "param/", "adam.m/", "adam.v/"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: dict
    meta: dict = field(default_factory=dict)
    params: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    def records(self):
        for prefix, group in ((PARAM, self.params), (ADAM_M, self.adam_m), (ADAM_V, self.adam_v)):
            for name, arr in group.items():
                yield prefix + name, arr

    def config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.model_config)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blob = json.dumps({"model": ckpt.model_config, "meta": ckpt.meta}, sort_keys=True).encode("utf-8")
    records = list(ckpt.records())
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(records))]
    for name, arr in records:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if dt not in _CODES:
            raise CheckpointError(f"record {name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw_name)), raw_name,
                  struct.pack("<BB", _CODES[dt], arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape),
                  np.ascontiguousarray(arr, dtype=dt).tobytes()]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a UDRM checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    (blob_len,) = r.unpack("<I")
    try:
        blob = json.loads(r.take(blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt config blob") from exc
    ckpt = Checkpoint(model_config=blob["model"], meta=blob["meta"], version=version)
    groups = {PARAM: ckpt.params, ADAM_M: ckpt.adam_m, ADAM_V: ckpt.adam_v}
    (n,) = r.unpack("<I")
    for _ in range(n):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: record {name} has unknown dtype code {code}")
        dims = r.unpack(f"<{rank}Q")
        dt = _DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(dims).copy()
        prefix = next((p for p in groups if name.startswith(p)), None)
        if prefix is None:
            raise CheckpointError(f"{path}: record {name} has an unknown prefix")
        groups[prefix][name[len(prefix):]] = arr
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes after the last record")
    return ckpt


def params_from_checkpoint(ckpt: Checkpoint, cfg: ModelConfig | None = None) -> dict[str, Tensor]:
    """Build model parameters, checking names and shapes against the config."""
    cfg = cfg or ckpt.config()
    expected = dict(param_shapes(cfg))
    unknown = sorted(set(ckpt.params) - set(expected))
    missing = sorted(set(expected) - set(ckpt.params))
    if unknown or missing:
        raise CheckpointError(f"checkpoint does not match the model: unknown {unknown[:5]}, "
                              f"missing {missing[:5]}")
    out = {}
    for name, shape in expected.items():
        arr = ckpt.params[name]
        if arr.shape != tuple(shape):
            raise CheckpointError(f"parameter {name}: checkpoint shape {arr.shape}, model {shape}")
        out[name] = Tensor(arr.copy(), requires_grad=True)
    return out
