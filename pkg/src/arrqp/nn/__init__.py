"""Minimal float64 training substrate: layers with exact reverse-mode
gradients, robust losses, Adam/RMSProp, and an early-stopping train loop."""

from .layers import (
    Parameter,
    Dense,
    Conv1x1,
    Dropout,
    relu,
    relu_grad,
    leaky_relu,
    leaky_relu_grad,
    sigmoid,
    sigmoid_grad,
    glorot_uniform,
)
from .losses import (
    cauchy_loss,
    cauchy_grad,
    mse_loss,
    mse_grad,
    mae_loss,
    mae_grad,
    huber_loss,
    huber_grad,
    LOSSES,
)
from .optim import Adam, RMSProp, make_optimizer
from .training import TrainConfig, TrainingError, train_loop, TrainResult

__all__ = [
    "Parameter", "Dense", "Conv1x1", "Dropout",
    "relu", "relu_grad", "leaky_relu", "leaky_relu_grad",
    "sigmoid", "sigmoid_grad", "glorot_uniform",
    "cauchy_loss", "cauchy_grad", "mse_loss", "mse_grad",
    "mae_loss", "mae_grad", "huber_loss", "huber_grad", "LOSSES",
    "Adam", "RMSProp", "make_optimizer",
    "TrainConfig", "TrainingError", "train_loop", "TrainResult",
]
