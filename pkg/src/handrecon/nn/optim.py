from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: dict[str, Tensor], state: OptimizerState,
             grads: dict[str, np.ndarray] | None = None) -> None:
    """In-place momentum SGD: ``v <- momentum*v + g``, ``p <- p - lr*v``.

    Gradients default to each parameter's ``.grad`` (missing grads count as
    zero). A non-finite gradient anywhere aborts the whole step untouched.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    for name, g in grads.items():
        if g is None:
            continue
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name}; step aborted")
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        v = state.velocity.get(name)
        v = g.astype(p.data.dtype, copy=True) if v is None else state.momentum * v + g
        state.velocity[name] = v
        p.data = p.data - state.learning_rate * v


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState,
              grads: dict[str, np.ndarray] | None = None) -> None:
    """In-place Adam update with bias correction; same abort rule as ``sgd_step``."""
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name}; step aborted")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.beta1 * state.first.get(name, 0.0) + (1.0 - state.beta1) * g
        v = state.beta2 * state.second.get(name, 0.0) + (1.0 - state.beta2) * g * g
        state.first[name], state.second[name] = m, v
        p.data = (p.data - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
