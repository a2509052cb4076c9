"""Joint global/local graph structure learning for semi-supervised node
classification, with its own dense reverse-mode autodiff engine."""

__version__ = "0.1.0"

from . import autodiff, data, graph_prior, layers, losses, model, projection, training
from .autodiff import Tensor, backward
from .data import DatasetBundle, SyntheticSpec, generate_synthetic, load_bundle, save_bundle
from .graph_prior import GraphPrior, build_prior
from .model import ModelConfig, ModelState, build_model, forward, load_checkpoint
from .training import TrainConfig, evaluate, grad_check, run, run_seeds, train

__all__ = [
    "Tensor",
    "backward",
    "DatasetBundle",
    "SyntheticSpec",
    "generate_synthetic",
    "load_bundle",
    "save_bundle",
    "GraphPrior",
    "build_prior",
    "ModelConfig",
    "ModelState",
    "build_model",
    "forward",
    "load_checkpoint",
    "TrainConfig",
    "evaluate",
    "grad_check",
    "run",
    "run_seeds",
    "train",
    "autodiff",
    "data",
    "graph_prior",
    "layers",
    "losses",
    "model",
    "projection",
    "training",
]
