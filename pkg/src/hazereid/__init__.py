"""Haze-robust person re-identification at desk scale: haze synthesis, a
teacher-student adaptation loop with an intrinsic-similarity loss and an
adversarial KL distillation loss, and a CMC/mAP retrieval evaluator."""

from .autodiff import Adam, Tensor, backward, finite_difference_check
from .config import ExperimentSpec, load_spec
from .errors import (ConfigError, ContractError, DimensionError, IngestionError, NumericError,
                     ParseError)
from .haze import HazeParams, compose_haze, hazify_dataset, transmission
from .losses import LossWeights, ce_smoothed, idkl_loss, isl_loss
from .trainer import TrainConfig, adapt, pretrain

__all__ = [
    "Adam", "Tensor", "backward", "finite_difference_check",
    "ExperimentSpec", "load_spec",
    "ConfigError", "ContractError", "DimensionError", "IngestionError", "NumericError", "ParseError",
    "HazeParams", "compose_haze", "hazify_dataset", "transmission",
    "LossWeights", "ce_smoothed", "idkl_loss", "isl_loss",
    "TrainConfig", "adapt", "pretrain",
]
