"""Tempered-posterior inference for random geometric graph latent space models."""

from .manifold import GeometryKind
from .model import DyadData, EtaPosterior, Hyperparams, LatentState
from .prequential import RiskTable, SweepConfig, run_sweep
from .sampler import ChainConfig, SampleBatch, sample_posterior

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "DyadData",
    "EtaPosterior",
    "GeometryKind",
    "Hyperparams",
    "LatentState",
    "RiskTable",
    "SampleBatch",
    "SweepConfig",
    "run_sweep",
    "sample_posterior",
]
