"""Dual-feature graph-attention link prediction for drug repositioning.

Modules cover dataset I/O (`data`), graph construction (`graphs`), a small
reverse-mode autodiff core with compiled attention kernels (`autodiff`,
`kernels`), the encoder/decoder model (`attention`, `model`), weighted-BCE
training (`training`), and the cross-validation / ranking harness
(`evaluation`).  `BACKEND` names the attention kernel implementation in
use ("cython" or "numpy").
"""

__version__ = "0.1.0"

from .config import RunConfig, config_hash, load_config, resolve_config
from .data import Dataset, load_dataset, validate_dataset, write_dataset
from .evaluation import (
    MetricsReport,
    auroc,
    aupr,
    cross_validate,
    kfold_split,
    loocv_new_disease,
    rank_candidates,
    sweep_topt,
)
from .kernels import BACKEND
from .model import ModelConfig, build_model_inputs, forward, predict_scores
from .synthetic import planted_dataset, toy_dataset
from .training import TrainConfig, label_sets, train
from .verify import gradcheck_model

__all__ = [
    "BACKEND",
    "Dataset",
    "MetricsReport",
    "ModelConfig",
    "RunConfig",
    "TrainConfig",
    "__version__",
    "auroc",
    "aupr",
    "build_model_inputs",
    "config_hash",
    "cross_validate",
    "forward",
    "gradcheck_model",
    "kfold_split",
    "label_sets",
    "load_config",
    "load_dataset",
    "loocv_new_disease",
    "planted_dataset",
    "predict_scores",
    "rank_candidates",
    "resolve_config",
    "sweep_topt",
    "toy_dataset",
    "train",
    "validate_dataset",
    "write_dataset",
]
