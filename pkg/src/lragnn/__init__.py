"""Latent-relation graph features with a progressive RL age estimator."""

from .config import PipelineConfig
from .dataset import SyntheticSpec, generate_synthetic, read_samples, write_samples
from .errors import LRAGNNError
from .model import LRAGNN, ModelShape
from .numerics import GradReport, ParamStore, Tape, grad_check

__version__ = "0.1.0"

__all__ = [
    "GradReport", "LRAGNN", "LRAGNNError", "ModelShape", "ParamStore", "PipelineConfig",
    "SyntheticSpec", "Tape", "generate_synthetic", "grad_check", "read_samples", "write_samples",
]
