"""From-scratch residual MLP emulator (numpy only)."""

from .layers import mish
from .model import (
    Architecture,
    EmulatorNet,
    NormalizationStats,
    backward,
    forward,
    mse_loss,
    predict,
)
from .optim import AdaBelief, adabelief_step
from .train import TrainConfig, TrainingLog, train

__all__ = [
    "AdaBelief",
    "Architecture",
    "EmulatorNet",
    "NormalizationStats",
    "TrainConfig",
    "TrainingLog",
    "adabelief_step",
    "backward",
    "forward",
    "mish",
    "mse_loss",
    "predict",
    "train",
]
