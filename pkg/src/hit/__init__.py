"""Hierarchical two-level cross-modal contrastive matching with momentum memory banks."""

from .config import RunConfig, load_config
from .data import PairedData, SyntheticSpec, generate_synthetic, load_feature_file, write_feature_file
from .retrieval import EvalResult, RetrievalReport, evaluate, fuse_similarity, metrics, rank
from .tensor import Tensor, backward, no_grad
from .train import HiTModel, Trainer, run_ablation, run_training

__version__ = "0.1.0"

__all__ = [
    "EvalResult",
    "HiTModel",
    "PairedData",
    "RetrievalReport",
    "RunConfig",
    "SyntheticSpec",
    "Tensor",
    "Trainer",
    "backward",
    "evaluate",
    "fuse_similarity",
    "generate_synthetic",
    "load_config",
    "load_feature_file",
    "metrics",
    "no_grad",
    "rank",
    "run_ablation",
    "run_training",
    "write_feature_file",
]
