"""Minimal differentiable substrate: tensors, layers, SGD, checkpoints."""
from .layers import LayerSpec, Sequential, forward, init_params
from .optim import NonFiniteGradientError, OptimizerState, sgd_step
from .tensor import GraphReleasedError, Tensor, stop_gradient

__all__ = [
    "GraphReleasedError",
    "LayerSpec",
    "NonFiniteGradientError",
    "OptimizerState",
    "Sequential",
    "Tensor",
    "forward",
    "init_params",
    "sgd_step",
    "stop_gradient",
]
