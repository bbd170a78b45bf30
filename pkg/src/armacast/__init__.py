"""Convolutional AR/MA forecasting block with from-scratch training."""
from .model import ArmaParams, arma_backward, arma_forward, cnn_forward, init_params
from .tensor_ops import Kernel, Projection

__version__ = "0.1.0"

__all__ = ["ArmaParams", "Kernel", "Projection", "arma_backward", "arma_forward", "cnn_forward", "init_params"]
