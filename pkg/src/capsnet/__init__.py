"""Capsule networks with dynamic routing, CNN baselines, and ensembling.

Built on a small float32 autograd core (:mod:`capsnet.tensor`); see the
README for the CLI and training workflow.
"""

from .baselines import AlexNet, BaselineConfig, LeNet, build_baseline, cross_entropy_loss
from .capsule import (
    CapsNet,
    CapsNetConfig,
    CapsuleBlock,
    RoutingState,
    class_probabilities,
    compute_votes,
    count_parameters,
    dynamic_routing,
    routing_benchmark,
    squash,
)
from .checkpoint import Checkpoint, build_model, load_checkpoint, save_checkpoint
from .data import DatasetManifest, Sample, load_directory_corpus, load_idx, resize, split
from .ensemble import average, evaluate, to_distribution
from .errors import ContractError, DataError, ShapeError, TrainingError
from .losses import MarginLossParams, margin_loss, reconstruction_loss, total_loss
from .optim import Adam
from .tensor import ConvSpec, Tensor, no_grad
from .train import TrainResult, TrainRun, evaluate_accuracy, train_model

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AlexNet",
    "BaselineConfig",
    "CapsNet",
    "CapsNetConfig",
    "CapsuleBlock",
    "Checkpoint",
    "ContractError",
    "ConvSpec",
    "DataError",
    "DatasetManifest",
    "LeNet",
    "MarginLossParams",
    "RoutingState",
    "Sample",
    "ShapeError",
    "Tensor",
    "TrainResult",
    "TrainRun",
    "TrainingError",
    "average",
    "build_baseline",
    "build_model",
    "class_probabilities",
    "compute_votes",
    "count_parameters",
    "cross_entropy_loss",
    "dynamic_routing",
    "evaluate",
    "evaluate_accuracy",
    "load_checkpoint",
    "load_directory_corpus",
    "load_idx",
    "margin_loss",
    "no_grad",
    "reconstruction_loss",
    "resize",
    "routing_benchmark",
    "save_checkpoint",
    "split",
    "squash",
    "to_distribution",
    "total_loss",
    "train_model",
]
