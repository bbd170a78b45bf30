"""Positional-information probe on frozen convolution features.

A single linear readout (the position encoding module, PEM) is fitted in
closed form on the frozen AR/MA convolution maps of training windows and asked
to reproduce a fixed positional pattern (linear index, gradation, sinusoid).
Two controls bound what the readout can get from position-free information:

* shuffled control: the trained readout is evaluated on features whose time
  rows were permuted (one seeded permutation for every window);
* unpadded control: features and targets are cropped to the rows that never
  see the zero padding, and a fresh readout is fitted there.

The readout has no intercept by default. The targets do not depend on the
window, so an intercept alone reproduces them exactly and the fitted weights
collapse to zero whatever the features hold. Without it, the readout still
needs some window-independent feature component (a conv bias or RevIN beta)
to build a fixed pattern, since RevIN-normalized features sum to zero over time.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .model import forward

KINDS = ("linear_index", "gradation", "sinusoid")
PEM_RIDGE = 1e-6


@dataclass
class ProbeTarget:
    kind: str
    grid: np.ndarray


def gen_target(kind, L, C):
    """Positional pattern over an L x C window; depends only on (kind, L, C)."""
    if L < 2:
        raise ConfigError("targets need L >= 2")
    i = np.arange(L, dtype=np.float64)[:, None]
    j = np.arange(C, dtype=np.float64)[None, :]
    if kind == "linear_index":
        grid = np.broadcast_to(i / (L - 1), (L, C))
    elif kind == "gradation":
        if C < 2:
            raise ConfigError("gradation needs at least 2 channels")
        grid = (i / (L - 1) + j / (C - 1)) / 2.0
    elif kind == "sinusoid":
        grid = np.broadcast_to(np.sin(2.0 * np.pi * i / L), (L, C))
    else:
        raise ConfigError(f"unknown probe target {kind!r}; expected one of {KINDS}")
    return ProbeTarget(kind, np.array(grid))


def extract_features(frozen, x):
    """Frozen convolution outputs ``(y_ar_hist, y_ma_hist)`` for window(s) ``x``.

    ``y_ma_hist`` is None for a CNN-only model. Projections and
    denormalization play no part; ``frozen`` is never modified.
    """
    _, cache = forward(x, frozen)
    return cache.y_ar_hist, (cache.y_ma_hist if frozen.variant == "arma" else None)


def feature_maps(frozen, x, batch=512):
    """Stacked feature maps, shape (N, L, C, M) with M = 2 for ARMA, 1 for CNN-only."""
    out = []
    for start in range(0, x.shape[0], batch):
        ar, ma = extract_features(frozen, x[start:start + batch])
        maps = [ar] if ma is None else [ar, ma]
        out.append(np.stack(maps, axis=-1))
    return np.concatenate(out)


@dataclass
class PemParams:
    weights: np.ndarray  # (P, F)
    bias: np.ndarray  # (P,)


def fit_pem(features, target, ridge=PEM_RIDGE, fit_intercept=False):
    """Ridge least squares from flattened features (N, F) to targets.

    ``target`` is either (N, P) or a single (P,) pattern shared by every row.
    Solved through the normal equations ``(X'X + ridge*I) W' = X'Y``; with
    ``fit_intercept`` the columns are centred first and the bias unpenalized.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError(f"features must be a non-empty N x F matrix, got shape {X.shape}")
    Y = np.asarray(target, dtype=np.float64)
    shared = Y.ndim == 1
    if not shared and Y.shape[0] != X.shape[0]:
        raise ContractError("target rows must match feature rows")
    N, F = X.shape
    x_mean = X.mean(axis=0) if fit_intercept else np.zeros(F)
    Xc = X - x_mean if fit_intercept else X
    if shared:
        y_mean = Y if fit_intercept else np.zeros_like(Y)
        # every row targets the same pattern: X'Y = outer(sum_n x_n, y)
        rhs = np.outer(Xc.sum(axis=0), Y - y_mean)
    else:
        y_mean = Y.mean(axis=0) if fit_intercept else np.zeros(Y.shape[1])
        rhs = Xc.T @ (Y - y_mean)
    gram = Xc.T @ Xc + ridge * np.eye(F)
    try:
        W = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        W = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    bias = y_mean - x_mean @ W
    return PemParams(W.T.copy(), np.asarray(bias, dtype=np.float64))


def pem_predict(pem, features):
    return np.asarray(features, dtype=np.float64) @ pem.weights.T + pem.bias


def eval_pem(pem, features, target):
    """Mean absolute error of the readout over all windows and positions."""
    pred = pem_predict(pem, features)
    target = np.asarray(target, dtype=np.float64)
    return float(np.mean(np.abs(pred - target)))


def _flatten(maps):
    return maps.reshape(maps.shape[0], -1)


def run_probe(frozen, train_x, test_x, kind, seed=0, ridge=PEM_RIDGE, fit_intercept=False):
    """Fit and score the readout for one target kind; returns a JSON-ready dict.

    ``control_mae`` is the shuffled-feature control and ``unpadded_mae`` the
    padding-free control.
    """
    before = {k: v.copy() for k, v in frozen.to_arrays().items()}
    L, C = frozen.lookback, frozen.channels
    target = gen_target(kind, L, C).grid
    tr = feature_maps(frozen, np.asarray(train_x))
    te = feature_maps(frozen, np.asarray(test_x))

    pem = fit_pem(_flatten(tr), target.ravel(), ridge, fit_intercept)
    mae = eval_pem(pem, _flatten(te), target.ravel())

    perm = np.random.default_rng(seed).permutation(L)
    control_mae = eval_pem(pem, _flatten(te[:, perm]), target.ravel())

    p = (frozen.k - 1) // 2
    keep = slice(p, L - p)
    inner = fit_pem(_flatten(tr[:, keep]), target[keep].ravel(), ridge, fit_intercept)
    unpadded_mae = eval_pem(inner, _flatten(te[:, keep]), target[keep].ravel())

    for name, value in frozen.to_arrays().items():
        if not np.array_equal(value, before[name]):
            raise AssertionError(f"probe modified frozen parameter {name}")
    return {
        "kind": kind,
        "mae": mae,
        "control_mae": control_mae,
        "unpadded_mae": unpadded_mae,
        "L": L,
        "C": C,
        "n_train": int(tr.shape[0]),
        "n_test": int(te.shape[0]),
        "fit_intercept": bool(fit_intercept),
    }
