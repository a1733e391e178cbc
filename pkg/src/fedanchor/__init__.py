"""Deterministic desk-scale simulator of adapter-based federated learning
with prototype anchors and top-k sparse uploads."""

from ._kernels import BACKEND as kernel_backend
from .config import ExperimentConfig, parse_config
from .protocol import run_ablation, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "run_experiment",
    "run_ablation",
    "kernel_backend",
    "__version__",
]
