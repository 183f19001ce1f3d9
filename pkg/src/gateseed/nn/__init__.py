"""Minimal numpy tensor engine and the grid-output gate detector."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .labels import D_MAX, GateLabel, decode_predictions, encode_grid_labels
from .loss import LossBreakdown, LossWeights, compute_loss, loss_gradient
from .network import (
    PENCILNET,
    Architecture,
    NetworkParams,
    ShapeError,
    StateError,
    backward,
    feature_map,
    forward,
    init_params,
    predict,
    update_running_stats,
)
from .optim import adam_step, lr_at_epoch
from .train import EpochLog, TrainingError, train

__all__ = [
    "PENCILNET", "Architecture", "NetworkParams", "ShapeError", "StateError",
    "backward", "feature_map", "forward", "init_params", "predict", "update_running_stats",
    "LossWeights", "LossBreakdown", "compute_loss", "loss_gradient",
    "GateLabel", "D_MAX", "encode_grid_labels", "decode_predictions",
    "adam_step", "lr_at_epoch", "train", "EpochLog", "TrainingError",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
