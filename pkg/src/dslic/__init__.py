"""Differentiable SLIC superpixels and superpixel-regularised adversarial patch training."""

__version__ = "0.1.0"

from .autodiff import JacobianFactors, apply_vjp, factors_from, grad_check, toy_optimize
from .image import check_image, read_image, to_features, write_image
from .pipeline import PatchTrainer, TrainConfig, train_patch
from .slic import ClusterState, SlicConfig, SlicSuperpixels, reconstruct, run_slic

__all__ = [
    "ClusterState",
    "JacobianFactors",
    "PatchTrainer",
    "SlicConfig",
    "SlicSuperpixels",
    "TrainConfig",
    "apply_vjp",
    "check_image",
    "factors_from",
    "grad_check",
    "read_image",
    "reconstruct",
    "run_slic",
    "to_features",
    "toy_optimize",
    "train_patch",
    "write_image",
]
