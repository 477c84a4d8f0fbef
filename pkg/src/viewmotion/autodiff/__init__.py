"""Tape-based reverse-mode differentiation on float64 numpy arrays."""

from . import ops
from .nn import (
    BatchNorm2d,
    Conv2d,
    ConvLSTMCell,
    ConvTranspose2d,
    Linear,
    Module,
    Parameter,
    init_parameters,
)
from .optim import Adam, lr_halving_schedule
from .tensor import (
    GradientError,
    ShapeError,
    Tape,
    TapeNode,
    Tensor,
    active_tape,
    backward,
)

__all__ = [
    "ops",
    "Tensor",
    "Tape",
    "TapeNode",
    "active_tape",
    "backward",
    "ShapeError",
    "GradientError",
    "Parameter",
    "Module",
    "init_parameters",
    "Conv2d",
    "ConvTranspose2d",
    "BatchNorm2d",
    "Linear",
    "ConvLSTMCell",
    "Adam",
    "lr_halving_schedule",
]
