"""Metric kernels shared by the trainer, CLI and probe."""
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, UndefinedCorrelationError
from .model import forward


@dataclass
class MetricsReport:
    mse: float
    mae: float
    n_windows: int
    n_values: int
    r_ar: float = None
    r_ma: float = None

    def to_dict(self):
        return asdict(self)


def pearson(a, b):
    """Sample Pearson correlation of two equal-length sequences (flattened)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ContractError("pearson needs at least 2 points")
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(np.dot(da, da))
    nb = np.sqrt(np.dot(db, db))
    if na == 0.0 or nb == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant sequence")
    r = float(np.dot(da, db) / (na * nb))
    return min(1.0, max(-1.0, r))


def _pearson_or_none(a, b):
    try:
        return pearson(a, b)
    except UndefinedCorrelationError:
        return None


def normalized_targets(y, cache):
    """Map targets into the RevIN-normalized space a window's forecast lives in."""
    st = cache.revin_state
    z = (y - st.mean[..., None, :]) / st.scale[..., None, :]
    return st.gamma * z + st.beta


def component_correlations(params, windows, batch=256):
    """Correlation of the AR and MA horizon outputs with the targets.

    Both components and the targets are compared in each window's RevIN
    normalized space, flattened over windows, steps and channels. A component
    that is identically constant (e.g. a zeroed MA branch) yields ``None``.
    """
    ar, ma, tgt = [], [], []
    for start in range(0, len(windows), batch):
        x = windows.x[start:start + batch]
        y = windows.y[start:start + batch]
        _, cache = forward(x, params)
        ar.append(cache.y_ar_fut)
        ma.append(cache.y_ma_fut)
        tgt.append(normalized_targets(y, cache))
    if not ar:
        raise ContractError("no windows to correlate")
    tgt = np.concatenate(tgt)
    return _pearson_or_none(np.concatenate(ar), tgt), _pearson_or_none(np.concatenate(ma), tgt)


def repeat_last_forecast(x, T):
    """Naive forecast: the window's final row repeated for T steps."""
    x = np.asarray(x, dtype=np.float64)
    return np.repeat(x[..., -1:, :], T, axis=-2)


def naive_metrics(windows):
    """MSE / MAE of the repeat-last baseline on a window set."""
    pred = repeat_last_forecast(windows.x, windows.T)
    diff = pred - windows.y
    return MetricsReport(
        mse=float(np.mean(diff * diff)),
        mae=float(np.mean(np.abs(diff))),
        n_windows=len(windows),
        n_values=int(diff.size),
    )
