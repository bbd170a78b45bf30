"""CSV ingestion, chronological splits, z-scoring, sliding windows and synthetic series.

CSV layout (what :func:`load_csv` reads and :func:`write_csv` writes): UTF-8,
comma separated, one header row, first column an opaque timestamp, remaining
columns decimal reals. Missing cells are rejected.
"""
import csv
import math
import warnings
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError


@dataclass
class SeriesTable:
    timestamps: list
    values: np.ndarray
    channel_names: list
    time_column: str = "date"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be N x C, got shape {self.values.shape}")
        if len(self.timestamps) != self.values.shape[0]:
            raise DataError("timestamp count does not match row count")
        if len(self.channel_names) != self.values.shape[1]:
            raise DataError("channel name count does not match column count")

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]

    def slice(self, start, stop):
        return SeriesTable(self.timestamps[start:stop], self.values[start:stop], list(self.channel_names), self.time_column)


def load_csv(path):
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: empty file")
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column and at least one value column")
        timestamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
            values = []
            for col, cell in enumerate(row[1:], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {col} ({header[col]!r}): non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {col} ({header[col]!r}): missing or non-finite value")
                values.append(v)
            timestamps.append(row[0])
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return SeriesTable(timestamps, np.array(rows), header[1:], header[0])


def write_csv(table, path):
    """Write ``table`` so that :func:`load_csv` reproduces it exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([table.time_column, *table.channel_names])
        for ts, row in zip(table.timestamps, table.values):
            w.writerow([ts, *(repr(float(v)) for v in row)])


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(not f > 0 for f in fr):
            raise ConfigError(f"split fractions must all be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fr)}")

    def sizes(self, n):
        # tolerance guards against 0.7 * 10 == 7.000000000000001 style drift
        n_train = int(math.floor(self.train * n + 1e-9))
        n_val = int(math.floor(self.val * n + 1e-9))
        return n_train, n_val, n - n_train - n_val


def chronological_split(table, fractions=SplitSpec()):
    """Contiguous train / val / test blocks; the rounding remainder goes to test."""
    n_train, n_val, _ = fractions.sizes(table.n_rows)
    return (
        table.slice(0, n_train),
        table.slice(n_train, n_train + n_val),
        table.slice(n_train + n_val, table.n_rows),
    )


@dataclass
class ScalerStats:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(train):
    values = train.values if isinstance(train, SeriesTable) else np.asarray(train, dtype=np.float64)
    std = values.std(axis=0)
    flat = np.flatnonzero(std == 0.0)
    if flat.size:
        raise DataError(f"constant channel(s) {flat.tolist()} in the training split cannot be standardized")
    return ScalerStats(values.mean(axis=0), std)


def standardize(table, stats):
    if np.any(stats.std == 0.0):
        raise DataError("scaler has a zero standard deviation")
    if table.n_channels != stats.mean.shape[0]:
        raise DataError(f"table has {table.n_channels} channels, scaler has {stats.mean.shape[0]}")
    values = (table.values - stats.mean) / stats.std
    return SeriesTable(list(table.timestamps), values, list(table.channel_names), table.time_column)


def inverse_standardize(table, stats):
    values = table.values * stats.std + stats.mean
    return SeriesTable(list(table.timestamps), values, list(table.channel_names), table.time_column)


@dataclass
class WindowPair:
    x: np.ndarray
    y: np.ndarray
    origin_index: int


class WindowSet:
    """Sliding (lookback, horizon) windows over one split, held as strided views.

    Indexing yields :class:`WindowPair`; ``x``/``y``/``origins`` expose the
    stacked arrays of shape (N, L, C), (N, T, C) and (N,).
    """

    def __init__(self, values, L, T, stride=1):
        values = np.asarray(values, dtype=np.float64)
        if L < 1 or T < 0 or stride < 1:
            raise ConfigError("need L >= 1, T >= 0 and stride >= 1")
        self.L, self.T, self.stride = L, T, stride
        self.values = values
        n = values.shape[0]
        C = values.shape[1]
        if n < L + T:
            warnings.warn(f"split has {n} rows, fewer than L + T = {L + T}; no windows produced", stacklevel=3)
            self.origins = np.zeros(0, dtype=np.int64)
            self.x = np.zeros((0, L, C))
            self.y = np.zeros((0, T, C))
            return
        count = (n - L - T) // stride + 1
        self.origins = np.arange(count, dtype=np.int64) * stride
        # (n - w + 1, C, w) -> (count, w, C), views into `values`
        full = sliding_window_view(values, L + T, axis=0)[:: stride][:count]
        full = np.swapaxes(full, 1, 2)
        self.x = full[:, :L]
        self.y = full[:, L:]

    def __len__(self):
        return self.origins.shape[0]

    def __getitem__(self, i):
        return WindowPair(self.x[i], self.y[i], int(self.origins[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def channels(self):
        return self.values.shape[1]


def make_windows(split, L, T, stride=1):
    values = split.values if isinstance(split, SeriesTable) else split
    return WindowSet(values, L, T, stride)


def _hourly_stamps(n, start=datetime(2020, 1, 1)):
    return [(start + timedelta(hours=i)).strftime("%Y-%m-%d %H:%M:%S") for i in range(n)]


def synth_trend_shift(seed, n, channels=1, shift_at=None, magnitude=0.0, slope=0.01, noise=0.1):
    """Piecewise-linear trend whose slope changes by ``magnitude`` at ``shift_at``, plus noise.

    Channel ``c`` has pre-shift slope ``slope * (c + 1)``. The trend is
    continuous at the break.
    """
    if n < 1 or channels < 1:
        raise ConfigError("n and channels must be positive")
    shift_at = n // 2 if shift_at is None else shift_at
    if not 0 <= shift_at <= n:
        raise ConfigError("shift_at must lie within the series")
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)
    after = np.maximum(t - shift_at, 0.0)
    slopes = slope * (np.arange(channels) + 1.0)
    trend = t[:, None] * slopes[None, :] + magnitude * after[:, None]
    values = trend + noise * rng.standard_normal((n, channels))
    return SeriesTable(_hourly_stamps(n), values, [f"ch{c}" for c in range(channels)])


def synth_gas_analog(seed, n, lag=5, gain=0.8, smooth=6, trend=0.002, noise=0.05):
    """Two-channel stand-in for the gas-furnace input/output pair.

    ``gas_rate`` is a smooth AR(2) process; ``co2`` is its negated, ``lag``-delayed
    moving average (width ``smooth``) scaled by ``gain``, plus a slow linear
    trend and observation noise.
    """
    if n < 1:
        raise ConfigError("n must be positive")
    rng = np.random.default_rng(seed)
    burn = 200 + lag + smooth
    total = n + burn
    shocks = rng.standard_normal(total)
    gas = np.zeros(total)
    for t in range(2, total):
        gas[t] = 1.6 * gas[t - 1] - 0.7 * gas[t - 2] + 0.3 * shocks[t]
    ma = np.convolve(gas, np.ones(smooth) / smooth, mode="full")[:total]
    co2 = np.zeros(total)
    co2[lag:] = -gain * ma[:-lag] if lag else -gain * ma
    gas, co2 = gas[burn:], co2[burn:]
    co2 = co2 + trend * np.arange(n) + noise * rng.standard_normal(n)
    return SeriesTable(_hourly_stamps(n), np.column_stack([gas, co2]), ["gas_rate", "co2"])
