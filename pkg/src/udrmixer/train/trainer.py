"""Training loop with epoch-level shuffling, logging and resumable checkpoints.

Everything random is derived from ``TrainConfig.seed``: parameter
initialization, the per-epoch permutation (a generator seeded with
``(seed, 0, epoch)``) and a patch generator whose state travels in the
checkpoint.  Runs are therefore reproducible, and a run resumed from a
checkpoint continues exactly as the uninterrupted run would.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..imageio import load_dataset, to_uint8
from ..metrics import psnr
from ..model import ModelConfig, init_params, l1_loss, udr_mixer_forward
from ..tensor import Tensor
from .checkpoint import Checkpoint, load_checkpoint, params_from_checkpoint, save_checkpoint
from .data import sample_patch, to_batch
from .inference import forward_image
from .optim import AdamHyper, OptimState, adam_step, collect_grads, zero_grads

LOG_FIELDS = ["step", "epoch", "loss", "lr", "val_psnr"]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    ``max_steps`` (0 for no limit) ends training early; ``checkpoint_every``
    and ``val_every`` are step intervals (0 disables the periodic action;
    a final checkpoint is always written).  The last ``val_count`` pairs of
    the dataset are held out for validation.
    """

    epochs: int = 500
    batch_size: int = 8
    patch_size: int = 768
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    max_steps: int = 0
    checkpoint_every: int = 0
    val_every: int = 0
    val_count: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.patch_size < 1 or self.epochs < 1:
            raise ValueError("epochs, batch_size and patch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        for name in ("max_steps", "checkpoint_every", "val_every", "val_count"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def hyper(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.adam_eps)

    def check_model(self, cfg: ModelConfig) -> None:
        if self.patch_size % cfg.divisor:
            raise ValueError(f"patch_size {self.patch_size} must be divisible by {cfg.divisor}")

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class StepRecord:
    step: int
    epoch: int
    loss: float
    indices: list[int]
    specs: list


class Trainer:
    """Owns parameters, optimizer state and the data-order bookkeeping."""

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 rain: Sequence[np.ndarray], gt: Sequence[np.ndarray],
                 val_rain: Sequence[np.ndarray] = (), val_gt: Sequence[np.ndarray] = ()):
        if not rain:
            raise ValueError("training set is empty")
        train_cfg.check_model(model_cfg)
        for img in rain:
            if min(img.shape[:2]) < train_cfg.patch_size:
                raise ValueError(f"image {img.shape[:2]} is smaller than the patch size "
                                 f"{train_cfg.patch_size}")
        self.model_cfg, self.cfg = model_cfg, train_cfg
        self.rain, self.gt = list(rain), list(gt)
        self.val_rain, self.val_gt = list(val_rain), list(val_gt)
        self.params = init_params(model_cfg, seed=train_cfg.seed)
        self.opt = OptimState.zeros_like(self.params)
        self.rng = np.random.default_rng([train_cfg.seed, 1])
        self.step = 0
        self.epoch = 0
        self.pos = 0

    # -- data order --------------------------------------------------------
    def _permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.cfg.seed, 0, epoch]).permutation(len(self.rain))

    def done(self) -> bool:
        return self.epoch >= self.cfg.epochs or (0 < self.cfg.max_steps <= self.step)

    def train_step(self) -> StepRecord:
        """One Adam step on the next batch of the current epoch."""
        perm = self._permutation(self.epoch)
        idx = [int(i) for i in perm[self.pos: self.pos + self.cfg.batch_size]]
        epoch = self.epoch
        pairs = [sample_patch(self.rain[i], self.gt[i], self.cfg.patch_size, self.rng,
                              return_spec=True) for i in idx]
        x = Tensor(to_batch([p[0] for p in pairs]))
        y = Tensor(to_batch([p[1] for p in pairs]))
        loss = l1_loss(udr_mixer_forward(x, self.params, self.model_cfg), y)
        loss.backward()
        self.opt = adam_step(self.params, collect_grads(self.params), self.opt, self.cfg.hyper())
        zero_grads(self.params)
        self.step += 1
        self.pos += len(idx)
        if self.pos >= len(self.rain):
            self.epoch, self.pos = self.epoch + 1, 0
        return StepRecord(self.step, epoch, float(loss.data), idx, [p[2] for p in pairs])

    def validate(self) -> float:
        """Mean PSNR of derained held-out images (8-bit quantized) against ground truth."""
        if not self.val_rain:
            return float("nan")
        scores = [psnr(to_uint8(forward_image(self.params, self.model_cfg, r)), to_uint8(g))
                  for r, g in zip(self.val_rain, self.val_gt)]
        return float(np.mean(scores))

    # -- checkpoints -------------------------------------------------------
    def checkpoint(self) -> Checkpoint:
        meta = {"step": self.step, "epoch": self.epoch, "pos": self.pos, "adam_t": self.opt.t,
                "rng_state": self.rng.bit_generator.state, "train_config": asdict(self.cfg)}
        return Checkpoint(self.model_cfg.to_dict(), meta,
                          {k: p.data.copy() for k, p in self.params.items()},
                          {k: v.copy() for k, v in self.opt.m.items()},
                          {k: v.copy() for k, v in self.opt.v.items()})

    def restore(self, ckpt: Checkpoint) -> None:
        if ModelConfig.from_dict(ckpt.model_config) != self.model_cfg:
            raise ValueError("checkpoint model config differs from the trainer's")
        self.params = params_from_checkpoint(ckpt, self.model_cfg)
        if not ckpt.adam_m:
            raise ValueError("checkpoint carries no optimizer state; cannot resume")
        self.opt = OptimState({k: v.copy() for k, v in ckpt.adam_m.items()},
                              {k: v.copy() for k, v in ckpt.adam_v.items()}, int(ckpt.meta["adam_t"]))
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = ckpt.meta["rng_state"]
        self.step, self.epoch = int(ckpt.meta["step"]), int(ckpt.meta["epoch"])
        self.pos = int(ckpt.meta["pos"])


def split_holdout(n: int, val_count: int) -> tuple[list[int], list[int]]:
    if val_count >= n:
        raise ValueError(f"val_count {val_count} leaves no training pairs out of {n}")
    return list(range(n - val_count)), list(range(n - val_count, n))


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset_dir, out_dir,
          resume=None, progress=None) -> Trainer:
    """Train on ``dataset_dir`` writing ``log.csv``, ``batches.csv`` and checkpoints to ``out_dir``.

    ``batches.csv`` lists, per step, the image ids and patch windows used,
    so any logged loss can be recomputed from the preceding checkpoint.
    """
    ids, rain, gt = load_dataset(dataset_dir)
    tr, va = split_holdout(len(ids), train_cfg.val_count)
    trainer = Trainer(model_cfg, train_cfg, [rain[i] for i in tr], [gt[i] for i in tr],
                      [rain[i] for i in va], [gt[i] for i in va])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        trainer.restore(load_checkpoint(resume))
    log_path, batch_path = out / "log.csv", out / "batches.csv"
    fresh = resume is None or not log_path.exists()
    if not fresh:
        _truncate_after(log_path, trainer.step)
        _truncate_after(batch_path, trainer.step)
    mode = "w" if fresh else "a"
    with open(log_path, mode, newline="", encoding="utf-8") as lf, \
            open(batch_path, mode, newline="", encoding="utf-8") as bf:
        log, blog = csv.writer(lf), csv.writer(bf)
        if fresh:
            log.writerow(LOG_FIELDS)
            blog.writerow(["step", "id", "y", "x", "flip_h", "flip_v"])
        while not trainer.done():
            rec = trainer.train_step()
            val = ""
            if train_cfg.val_every and rec.step % train_cfg.val_every == 0:
                val = repr(trainer.validate())
            log.writerow([rec.step, rec.epoch, repr(rec.loss), repr(train_cfg.lr), val])
            for i, spec in zip(rec.indices, rec.specs):
                blog.writerow([rec.step, ids[tr[i]], spec.y, spec.x, int(spec.flip_h), int(spec.flip_v)])
            if train_cfg.checkpoint_every and rec.step % train_cfg.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt_{rec.step:06d}.udrm", trainer.checkpoint())
            if progress is not None:
                progress(rec)
    save_checkpoint(out / "final.udrm", trainer.checkpoint())
    return trainer


def _truncate_after(path: Path, step: int) -> None:
    """Drop CSV rows logged after ``step``, so resuming from an older checkpoint does not duplicate them."""
    if not path.exists():
        return
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    kept = rows[:1] + [r for r in rows[1:] if int(r[0]) <= step]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(kept)


def read_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def epoch_mean_losses(rows: list[dict]) -> dict[int, float]:
    by_epoch: dict[int, list[float]] = {}
    for r in rows:
        by_epoch.setdefault(int(r["epoch"]), []).append(float(r["loss"]))
    return {e: float(np.mean(v)) for e, v in sorted(by_epoch.items())}
