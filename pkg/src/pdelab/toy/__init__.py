"""Toy transformer harness: synthetic tasks, model variants, training,
and the retention estimator."""

from .data import TaskDataset, load_split, make_task, save_split
from .model import (
    POSITIONS,
    DiffusionSettings,
    ModelConfig,
    ToyTransformer,
    build_model,
    parameter_count,
)
from .retention import (
    PositionValueWeights,
    RetentionEstimate,
    estimate_retention,
    position_value,
)
from .training import (
    DivergenceError,
    PositionResult,
    TrainReport,
    accuracy,
    evaluate_positions,
    train,
)

__all__ = [
    "POSITIONS",
    "DiffusionSettings",
    "DivergenceError",
    "ModelConfig",
    "PositionResult",
    "PositionValueWeights",
    "RetentionEstimate",
    "TaskDataset",
    "ToyTransformer",
    "TrainReport",
    "accuracy",
    "build_model",
    "estimate_retention",
    "evaluate_positions",
    "load_split",
    "make_task",
    "parameter_count",
    "position_value",
    "save_split",
    "train",
]
