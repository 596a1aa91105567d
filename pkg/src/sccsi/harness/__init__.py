"""Configuration, checkpoints, sweeps and the command-line interface."""
from .checkpoint import CheckpointError, load_model, save_model
from .config import EvalConfig, ExperimentConfig, TrainConfig, from_dict, load_config
from .experiment import (CSV_HEADER, BaselineReceiver, MetricsRow, UnfoldedReceiver,
                         evaluate_point, read_csv, sweep, train_model, write_csv)

__all__ = [
    "CheckpointError", "load_model", "save_model",
    "EvalConfig", "ExperimentConfig", "TrainConfig", "from_dict", "load_config",
    "CSV_HEADER", "BaselineReceiver", "MetricsRow", "UnfoldedReceiver", "evaluate_point",
    "read_csv", "sweep", "train_model", "write_csv",
]
