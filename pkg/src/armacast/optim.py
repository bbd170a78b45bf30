"""Losses and the AdamW update (decoupled weight decay)."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NumericError


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    if pred.size == 0:
        raise ContractError("empty prediction")
    return pred, target


def mse_loss_and_grad(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred, target = _pair(pred, target)
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def mse(pred, target):
    return mse_loss_and_grad(pred, target)[0]


def mae(pred, target):
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("eps must be positive and weight_decay non-negative")


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param):
        param = np.asarray(param, dtype=np.float64)
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adamw_step(param, grad, state, config):
    """One AdamW update of a single array. Returns ``(new_param, new_state)``.

    Inputs are not modified.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ContractError(f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient; update aborted")
    step = state.step + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grad
    v = config.beta2 * state.v + (1.0 - config.beta2) * grad * grad
    m_hat = m / (1.0 - config.beta1 ** step)
    v_hat = v / (1.0 - config.beta2 ** step)
    new = param - config.lr * (m_hat / (np.sqrt(v_hat) + config.eps) + config.weight_decay * param)
    return new, AdamWState(m, v, step)


@dataclass
class AdamW:
    """AdamW over a dict of named arrays (see ``ArmaParams.to_arrays``)."""

    config: OptimConfig = field(default_factory=OptimConfig)
    states: dict = field(default_factory=dict)

    def step(self, arrays, grads):
        # validate every gradient before touching any state
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}; update aborted")
        out = {}
        for name, value in arrays.items():
            state = self.states.get(name) or AdamWState.zeros_like(value)
            out[name], self.states[name] = adamw_step(value, grads[name], state, self.config)
        return out
