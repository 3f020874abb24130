"""DRAW: a recurrent variational auto-encoder with differentiable Gaussian attention."""
from .classifier import Classifier, ClassifierConfig
from .model import DrawConfig, DrawModel, LossBreakdown
from .tensor import Tape, Tensor, backward

__all__ = [
    "Classifier",
    "ClassifierConfig",
    "DrawConfig",
    "DrawModel",
    "LossBreakdown",
    "Tape",
    "Tensor",
    "backward",
]
