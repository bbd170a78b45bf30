"""RevIN normalization, the ARMA block and its CNN-only ablation.

Forward pass of the block on one window ``x`` (L x C)::

    x_norm    = revin_normalize(x)
    y_ar_hist = conv(x_norm, ar_kernel)              # trend on the window
    residual  = x_norm - y_ar_hist                   # what the trend misses
    y_ma_hist = conv(residual, ma_kernel)            # detail correction
    y_ar_fut  = project(y_ar_hist, ar_proj)          # L -> T steps, per channel
    y_ma_fut  = project(y_ma_hist, ma_proj)
    y_norm    = y_ar_fut + y_ma_fut + out_bias[:, None]
    y_out     = revin_denormalize(y_norm)

The CNN-only variant drops the MA branch: ``y_norm = y_ar_fut + out_bias``.
Everything accepts a leading batch axis.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError
from .tensor_ops import (
    Kernel,
    Projection,
    as_grid,
    check_finite,
    conv_same_backward,
    conv_same_forward,
    time_project_backward,
    time_project_forward,
)

REVIN_EPS = 1e-5
VARIANTS = ("arma", "cnn_only")


@dataclass
class RevInState:
    """Per-window statistics plus the affine parameters used to normalize it."""

    mean: np.ndarray
    std: np.ndarray
    eps: float
    gamma: np.ndarray
    beta: np.ndarray

    @property
    def scale(self):
        return self.std + self.eps


def revin_normalize(x, eps=REVIN_EPS, gamma=None, beta=None):
    """Standardize each channel over the window's time axis, then apply the affine.

    Returns ``(x_norm, state)``; ``state`` is what :func:`revin_denormalize`
    needs to invert the transform on a forecast.
    """
    x = as_grid(x)
    if x.shape[-2] < 2:
        raise ContractError("RevIN needs at least 2 time steps per window")
    C = x.shape[-1]
    gamma = np.ones(C) if gamma is None else np.asarray(gamma, dtype=np.float64)
    beta = np.zeros(C) if beta is None else np.asarray(beta, dtype=np.float64)
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ContractError(f"RevIN affine must have shape ({C},)")
    mean = x.mean(axis=-2)
    # a constant channel must normalize to exactly zero; the float mean can be off by an ulp
    const = np.all(x == x[..., :1, :], axis=-2)
    mean = np.where(const, x[..., 0, :], mean)
    std = np.where(const, 0.0, x.std(axis=-2))
    state = RevInState(mean, std, float(eps), gamma, beta)
    z = (x - mean[..., None, :]) / state.scale[..., None, :]
    return gamma * z + beta, state


def revin_denormalize(y_norm, state):
    y_norm = np.asarray(y_norm, dtype=np.float64)
    if y_norm.shape[-1] != state.gamma.shape[0]:
        raise ContractError(
            f"forecast has {y_norm.shape[-1]} channels, RevIN state has {state.gamma.shape[0]}"
        )
    if np.any(state.gamma == 0.0):
        raise NumericError("RevIN gamma has a zero entry; denormalization is undefined")
    z = (y_norm - state.beta) / state.gamma
    return z * state.scale[..., None, :] + state.mean[..., None, :]


@dataclass
class ArmaParams:
    """Learnable parameters. ``ma_kernel``/``ma_proj`` are None for the CNN-only variant."""

    ar_kernel: Kernel
    ar_proj: Projection
    out_bias: np.ndarray
    revin_gamma: np.ndarray
    revin_beta: np.ndarray
    ma_kernel: Kernel = None
    ma_proj: Projection = None

    def __post_init__(self):
        if (self.ma_kernel is None) != (self.ma_proj is None):
            raise ContractError("MA kernel and MA projection must both be present or both absent")
        if self.ma_kernel is not None:
            if self.ma_kernel.k != self.ar_kernel.k:
                raise ContractError("AR and MA kernels must share one filter size")
            if self.ma_proj.weights.shape != self.ar_proj.weights.shape:
                raise ContractError("AR and MA projections must share (T, L)")
        self.out_bias = np.asarray(self.out_bias, dtype=np.float64)
        self.revin_gamma = np.asarray(self.revin_gamma, dtype=np.float64)
        self.revin_beta = np.asarray(self.revin_beta, dtype=np.float64)
        if self.out_bias.shape != (self.horizon,):
            raise ContractError(f"out_bias must have shape ({self.horizon},)")

    @property
    def variant(self):
        return "cnn_only" if self.ma_kernel is None else "arma"

    @property
    def k(self):
        return self.ar_kernel.k

    @property
    def lookback(self):
        return self.ar_proj.lookback

    @property
    def horizon(self):
        return self.ar_proj.horizon

    @property
    def channels(self):
        return self.revin_gamma.shape[0]

    def to_arrays(self):
        """Flat name -> array view used by the optimizer and checkpoints."""
        arrays = {
            "ar_taps": self.ar_kernel.taps,
            "ar_bias": np.array(self.ar_kernel.bias),
            "ar_weights": self.ar_proj.weights,
            "ar_step_bias": self.ar_proj.step_bias,
        }
        if self.ma_kernel is not None:
            arrays.update(
                ma_taps=self.ma_kernel.taps,
                ma_bias=np.array(self.ma_kernel.bias),
                ma_weights=self.ma_proj.weights,
                ma_step_bias=self.ma_proj.step_bias,
            )
        arrays.update(out_bias=self.out_bias, revin_gamma=self.revin_gamma, revin_beta=self.revin_beta)
        return arrays

    @classmethod
    def from_arrays(cls, arrays):
        ma_kernel = ma_proj = None
        if "ma_taps" in arrays:
            ma_kernel = Kernel(np.array(arrays["ma_taps"]), float(arrays["ma_bias"]))
            ma_proj = Projection(np.array(arrays["ma_weights"]), np.array(arrays["ma_step_bias"]))
        return cls(
            ar_kernel=Kernel(np.array(arrays["ar_taps"]), float(arrays["ar_bias"])),
            ar_proj=Projection(np.array(arrays["ar_weights"]), np.array(arrays["ar_step_bias"])),
            out_bias=np.array(arrays["out_bias"]),
            revin_gamma=np.array(arrays["revin_gamma"]),
            revin_beta=np.array(arrays["revin_beta"]),
            ma_kernel=ma_kernel,
            ma_proj=ma_proj,
        )

    def copy(self):
        return ArmaParams.from_arrays(self.to_arrays())

    def without_ma(self):
        """The CNN-only parameter set sharing this block's AR branch."""
        arrays = {k: v for k, v in self.to_arrays().items() if not k.startswith("ma_")}
        return ArmaParams.from_arrays(arrays)

    def with_zero_ma(self):
        """ARMA parameters whose MA branch contributes exactly nothing."""
        arrays = dict(self.to_arrays())
        arrays.update(
            ma_taps=np.zeros((self.k, self.k)),
            ma_bias=np.array(0.0),
            ma_weights=np.zeros((self.horizon, self.lookback)),
            ma_step_bias=np.zeros(self.horizon),
        )
        return ArmaParams.from_arrays(arrays)


@dataclass
class ForwardCache:
    """Intermediates kept for the backward pass (and for the probe / reports)."""

    params: ArmaParams
    z: np.ndarray
    x_norm: np.ndarray
    y_ar_hist: np.ndarray
    residual: np.ndarray
    y_ma_hist: np.ndarray
    y_ar_fut: np.ndarray
    y_ma_fut: np.ndarray
    y_norm: np.ndarray
    revin_state: RevInState


def init_params(seed, L, T, k=5, C=1, variant="arma"):
    """Seeded initialization.

    Taps ~ U(-1/k, 1/k), AR projection weights ~ U(-1/sqrt(L), 1/sqrt(L)),
    biases 0, RevIN affine at identity. The MA projection starts at zero, so a
    fresh ARMA block computes exactly the CNN-only forecast and the MA branch's
    contribution is entirely learned. Both variants draw the MA taps, so the AR
    branch is the same for a given seed.
    """
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if min(L, T, k, C) < 1:
        raise ContractError("L, T, k and C must all be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ar_taps = rng.uniform(-1.0 / k, 1.0 / k, size=(k, k))
    ma_taps = rng.uniform(-1.0 / k, 1.0 / k, size=(k, k))
    bound = 1.0 / np.sqrt(L)
    ar_w = rng.uniform(-bound, bound, size=(T, L))
    params = ArmaParams(
        ar_kernel=Kernel(ar_taps, 0.0),
        ar_proj=Projection(ar_w, np.zeros(T)),
        out_bias=np.zeros(T),
        revin_gamma=np.ones(C),
        revin_beta=np.zeros(C),
        ma_kernel=Kernel(ma_taps, 0.0),
        ma_proj=Projection.zeros(T, L),
    )
    return params if variant == "arma" else params.without_ma()


def _check_input(x, params):
    x = as_grid(x)
    if x.shape[-2] != params.lookback:
        raise ContractError(f"window has {x.shape[-2]} steps, model lookback is {params.lookback}")
    if x.shape[-1] != params.channels:
        raise ContractError(f"window has {x.shape[-1]} channels, model expects {params.channels}")
    return x


def _forward(x, params):
    x = _check_input(x, params)
    x_norm, state = revin_normalize(x, REVIN_EPS, params.revin_gamma, params.revin_beta)
    z = (x - state.mean[..., None, :]) / state.scale[..., None, :]
    y_ar_hist = conv_same_forward(x_norm, params.ar_kernel)
    residual = x_norm - y_ar_hist
    y_ar_fut = time_project_forward(y_ar_hist, params.ar_proj)
    if params.ma_kernel is not None:
        y_ma_hist = conv_same_forward(residual, params.ma_kernel)
        y_ma_fut = time_project_forward(y_ma_hist, params.ma_proj)
        y_norm = y_ar_fut + y_ma_fut + params.out_bias[:, None]
    else:
        y_ma_hist = np.zeros_like(residual)
        y_ma_fut = np.zeros_like(y_ar_fut)
        y_norm = y_ar_fut + params.out_bias[:, None]
    y_out = check_finite(revin_denormalize(y_norm, state), "forecast")
    cache = ForwardCache(params, z, x_norm, y_ar_hist, residual, y_ma_hist, y_ar_fut, y_ma_fut, y_norm, state)
    return y_out, cache


def arma_forward(x, params):
    """ARMA block forecast for window(s) ``x``. Returns ``(y_out, cache)``."""
    if params.variant != "arma":
        raise ContractError("arma_forward needs MA parameters; use cnn_forward for the CNN-only variant")
    return _forward(x, params)


def cnn_forward(x, params):
    """CNN-only ablation: the ARMA block with its MA branch removed."""
    if params.variant != "cnn_only":
        raise ContractError("cnn_forward takes parameters without an MA branch (see ArmaParams.without_ma)")
    return _forward(x, params)


def forward(x, params):
    """Dispatch on the parameter set's variant."""
    return _forward(x, params)


def _revin_backward(grad_y_out, cache):
    """Backprop through denormalization: returns (grad_y_norm, grad_gamma, grad_beta)."""
    st = cache.revin_state
    s = st.scale[..., None, :]
    grad_y_norm = grad_y_out * s / st.gamma
    reduce_axes = tuple(range(grad_y_out.ndim - 1))
    grad_beta = -np.sum(grad_y_norm, axis=reduce_axes)
    grad_gamma = -np.sum(grad_y_norm * (cache.y_norm - st.beta), axis=reduce_axes) / st.gamma
    return grad_y_norm, grad_gamma, grad_beta


def arma_backward(grad_y_out, cache, params):
    """Gradients of ``sum(grad_y_out * y_out)`` for every parameter array.

    Returns a dict keyed like :meth:`ArmaParams.to_arrays`.
    """
    if cache.params is not params:
        raise ContractError("cache was produced by a different parameter set")
    grad_y_out = np.asarray(grad_y_out, dtype=np.float64)
    if grad_y_out.shape != cache.y_norm.shape:
        raise ContractError(f"grad shape {grad_y_out.shape} does not match forecast shape {cache.y_norm.shape}")
    check_finite(grad_y_out, "grad_y_out")

    grad_y_norm, g_gamma, g_beta = _revin_backward(grad_y_out, cache)
    grads = {}
    grads["out_bias"] = grad_y_norm.sum(axis=-1).reshape(-1, params.horizon).sum(axis=0)

    g_ar_hist, grads["ar_weights"], grads["ar_step_bias"] = time_project_backward(
        cache.y_ar_hist, params.ar_proj, grad_y_norm
    )
    g_x_norm = np.zeros_like(cache.x_norm)
    if params.ma_kernel is not None:
        g_ma_hist, grads["ma_weights"], grads["ma_step_bias"] = time_project_backward(
            cache.y_ma_hist, params.ma_proj, grad_y_norm
        )
        g_resid, grads["ma_taps"], ma_bias = conv_same_backward(cache.residual, params.ma_kernel, g_ma_hist)
        grads["ma_bias"] = np.array(ma_bias)
        # residual = x_norm - y_ar_hist
        g_x_norm = g_x_norm + g_resid
        g_ar_hist = g_ar_hist - g_resid

    g_x, grads["ar_taps"], ar_bias = conv_same_backward(cache.x_norm, params.ar_kernel, g_ar_hist)
    grads["ar_bias"] = np.array(ar_bias)
    g_x_norm = g_x_norm + g_x

    # x_norm = gamma * z + beta
    reduce_axes = tuple(range(g_x_norm.ndim - 1))
    grads["revin_gamma"] = g_gamma + np.sum(g_x_norm * cache.z, axis=reduce_axes)
    grads["revin_beta"] = g_beta + np.sum(g_x_norm, axis=reduce_axes)
    return {name: grads[name] for name in params.to_arrays()}


cnn_backward = arma_backward
