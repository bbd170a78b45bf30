"""Dense grid arithmetic and the two linear kernels the model is built from.

A *grid* is a float64 numpy array whose last two axes are (time, channel).
Every function here also accepts leading batch axes, ``(..., rows, cols)``;
parameter gradients are then summed over the batch.

Convolution follows the deep-learning convention: cross-correlation (no
kernel flip), zero "same" padding on both the time and channel axes.
Summations run in a fixed tap order so results are bitwise reproducible.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NumericError

DEFAULT_KERNEL_SIZE = 5


def as_grid(x, name="x"):
    """Return ``x`` as a float64 array with at least two axes, all finite."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 2:
        raise ContractError(f"{name} must have at least 2 axes (time, channel), got shape {arr.shape}")
    if arr.shape[-2] < 1 or arr.shape[-1] < 1:
        raise ContractError(f"{name} must have rows >= 1 and cols >= 1, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr, name="value"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains NaN or Inf")
    return arr


@dataclass
class Kernel:
    """A k x k convolution filter with a scalar bias."""

    taps: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 2 or self.taps.shape[0] != self.taps.shape[1]:
            raise ConfigError(f"kernel taps must be square, got shape {self.taps.shape}")
        if self.taps.shape[0] % 2 != 1:
            raise ConfigError(f"kernel size must be odd for same padding, got {self.taps.shape[0]}")
        self.bias = float(self.bias)

    @property
    def k(self):
        return self.taps.shape[0]

    @classmethod
    def zeros(cls, k=DEFAULT_KERNEL_SIZE):
        return cls(np.zeros((k, k)), 0.0)

    @classmethod
    def identity(cls, k=DEFAULT_KERNEL_SIZE):
        taps = np.zeros((k, k))
        taps[k // 2, k // 2] = 1.0
        return cls(taps, 0.0)


@dataclass
class Projection:
    """Per-channel linear map from a lookback of L steps to a horizon of T steps."""

    weights: np.ndarray
    step_bias: np.ndarray = field(default=None)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigError(f"projection weights must be T x L, got shape {self.weights.shape}")
        if self.step_bias is None:
            self.step_bias = np.zeros(self.weights.shape[0])
        self.step_bias = np.asarray(self.step_bias, dtype=np.float64)
        if self.step_bias.shape != (self.weights.shape[0],):
            raise ConfigError(
                f"step_bias must have shape ({self.weights.shape[0]},), got {self.step_bias.shape}"
            )

    @property
    def horizon(self):
        return self.weights.shape[0]

    @property
    def lookback(self):
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, T, L):
        return cls(np.zeros((T, L)), np.zeros(T))


def _pad(x, p):
    out = np.zeros(x.shape[:-2] + (x.shape[-2] + 2 * p, x.shape[-1] + 2 * p))
    out[..., p:p + x.shape[-2], p:p + x.shape[-1]] = x
    return out


def _correlate(x, taps, bias=0.0):
    k = taps.shape[0]
    p = (k - 1) // 2
    rows, cols = x.shape[-2:]
    xp = _pad(x, p)
    out = np.full(x.shape, bias)
    tmp = np.empty(x.shape)
    for a in range(k):
        for b in range(k):
            np.multiply(xp[..., a:a + rows, b:b + cols], taps[a, b], out=tmp)
            out += tmp
    return out


def conv_same_forward(x, kern):
    """Same-padded 2-D cross-correlation over (time, channel).

    ``out[i, j] = bias + sum_{a,b} taps[a, b] * x[i + a - p, j + b - p]`` with
    ``p = (k - 1) // 2`` and out-of-range entries of ``x`` read as zero.
    """
    return _correlate(as_grid(x), kern.taps, kern.bias)


def conv_same_backward(x, kern, grad_out):
    """Gradients of ``sum(grad_out * conv_same_forward(x, kern))``.

    Returns ``(grad_x, grad_taps, grad_bias)``. The input gradient is the
    same-padded correlation of ``grad_out`` with the flipped kernel.
    """
    x = as_grid(x)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != x.shape:
        raise ContractError(f"grad_out shape {grad_out.shape} does not match input shape {x.shape}")
    k = kern.k
    p = (k - 1) // 2
    rows, cols = x.shape[-2:]
    xp = _pad(x, p)
    flat = grad_out.ravel()
    grad_taps = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            grad_taps[a, b] = np.dot(flat, np.ascontiguousarray(xp[..., a:a + rows, b:b + cols]).ravel())
    grad_x = _correlate(grad_out, kern.taps[::-1, ::-1])
    return grad_x, grad_taps, float(np.sum(grad_out))


def time_project_forward(h, proj):
    """Map each channel's L-step history to T steps: ``W @ h + step_bias``."""
    h = as_grid(h, "h")
    if h.shape[-2] != proj.lookback:
        raise ContractError(f"projection expects lookback {proj.lookback}, got {h.shape[-2]} rows")
    return proj.weights @ h + proj.step_bias[:, None]


def time_project_backward(h, proj, grad_out):
    """Gradients of ``sum(grad_out * time_project_forward(h, proj))``.

    Returns ``(grad_h, grad_weights, grad_step_bias)``.
    """
    h = as_grid(h, "h")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if h.shape[-2] != proj.lookback:
        raise ContractError(f"projection expects lookback {proj.lookback}, got {h.shape[-2]} rows")
    expected = h.shape[:-2] + (proj.horizon, h.shape[-1])
    if grad_out.shape != expected:
        raise ContractError(f"grad_out shape {grad_out.shape}, expected {expected}")
    grad_h = proj.weights.T @ grad_out
    # sum over batch of grad_out_b @ h_b^T, as one (T, B*C) @ (B*C, L) product
    g2 = np.moveaxis(grad_out.reshape(-1, *grad_out.shape[-2:]), 1, 0).reshape(proj.horizon, -1)
    h2 = np.moveaxis(h.reshape(-1, *h.shape[-2:]), 1, 0).reshape(proj.lookback, -1)
    grad_w = g2 @ h2.T
    grad_sb = grad_out.sum(axis=-1).reshape(-1, proj.horizon).sum(axis=0)
    return grad_h, grad_w, grad_sb


def _binary(x, y, op, name):
    x = np.asarray(x, dtype=np.float64)
    if np.ndim(y) == 0:
        return check_finite(op(x, float(y)), name)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"{name}: shape mismatch {x.shape} vs {y.shape}")
    return check_finite(op(x, y), name)


def add(x, y):
    return _binary(x, y, np.add, "add")


def sub(x, y):
    return _binary(x, y, np.subtract, "sub")


def scale(x, alpha):
    if np.ndim(alpha) != 0:
        raise ContractError("scale expects a scalar factor")
    return _binary(x, alpha, np.multiply, "scale")
