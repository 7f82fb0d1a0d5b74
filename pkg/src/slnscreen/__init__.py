"""Sentinel lymph node metastasis screening on 100x100 RGB patches."""

from .corpus import DiagnosticCategory, grouped, load_manifest
from .metrics import diagnostic_metrics, group_confusion, majority_vote, tabulate_confusion4
from .nn import ModelConfig, build_model, predict
from .trainer import TrainConfig, evaluate_split, train

__all__ = [
    "DiagnosticCategory",
    "ModelConfig",
    "TrainConfig",
    "build_model",
    "diagnostic_metrics",
    "evaluate_split",
    "group_confusion",
    "grouped",
    "load_manifest",
    "majority_vote",
    "predict",
    "tabulate_confusion4",
    "train",
]
__version__ = "0.1.0"
