"""Dual-task ViT for hemorrhage presence and location on CT slices, built on a small numpy autodiff core."""
from .heads import LOCATIONS, PRESENCE, Prediction, combined_loss
from .model import DTViT, ModelConfig, count_params, param_shapes, preset
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "DTViT",
    "LOCATIONS",
    "ModelConfig",
    "PRESENCE",
    "Prediction",
    "Tensor",
    "backward",
    "combined_loss",
    "count_params",
    "no_grad",
    "param_shapes",
    "preset",
]
