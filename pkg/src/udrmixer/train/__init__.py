"""Data pipeline, optimization, checkpoints, inference and evaluation."""

from .checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    params_from_checkpoint,
    save_checkpoint,
)
from .data import PatchSpec, apply_patch_spec, draw_patch_spec, from_batch, sample_patch, to_batch
from .evaluate import evaluate_dirs, evaluate_model
from .inference import axis_weights, derain, forward_image, tile_starts, tiled_inference
from .optim import AdamHyper, OptimState, adam_step
from .trainer import TrainConfig, Trainer, epoch_mean_losses, read_log, split_holdout, train

__all__ = [
    "Checkpoint", "CheckpointError", "load_checkpoint", "params_from_checkpoint",
    "save_checkpoint", "PatchSpec", "apply_patch_spec", "draw_patch_spec", "from_batch",
    "sample_patch", "to_batch", "evaluate_dirs", "evaluate_model", "axis_weights", "derain",
    "forward_image", "tile_starts", "tiled_inference", "AdamHyper", "OptimState", "adam_step",
    "TrainConfig", "Trainer", "epoch_mean_losses", "read_log", "split_holdout", "train",
]
