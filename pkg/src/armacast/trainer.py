"""Mini-batch training, evaluation and checkpoint I/O.

Randomness: one integer seed feeds ``numpy.random.SeedSequence(seed).spawn(2)``;
child 0 drives parameter initialization, child 1 the per-epoch shuffles.
Training is fully sequential, so one (config, data, seed) triple always yields
the same parameters and logs.

Checkpoint layout (an uncompressed ``.npz`` zip archive):

* ``meta``: UTF-8 JSON encoded as a uint8 array with keys ``format``
  (``"armacast-checkpoint"``), ``version`` (``1``), ``variant``, ``config``,
  ``best_val`` and ``extra``.
* ``param/<name>``: little-endian float64 arrays, names as in
  ``ArmaParams.to_arrays`` (``ar_taps``, ``ar_bias``, ``ar_weights``, ...).
* ``scaler/mean``, ``scaler/std``: train-split standardization stats (optional).
"""
import json
import logging
import time
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CheckpointError, ConfigError, ContractError, DivergenceError, NumericError, VariantMismatchError
from .data import ScalerStats
from .metrics import MetricsReport
from .model import ArmaParams, VARIANTS, arma_backward, forward, init_params
from .optim import AdamW, OptimConfig, mse_loss_and_grad

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "armacast-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    L: int
    T: int
    C: int
    k: int = 5
    batch: int = 32
    lr: float = 0.001
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    variant: str = "arma"
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("max_epochs must be >= 0 and patience >= 1")
        if min(self.L, self.T, self.C) < 1:
            raise ConfigError("L, T and C must be positive")
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.k}")
        OptimConfig(lr=self.lr, weight_decay=self.weight_decay)

    def optim_config(self):
        return OptimConfig(lr=self.lr, weight_decay=self.weight_decay)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_mse: float
    val_mae: float
    wall_time: float = field(default=0.0, compare=False)


def _rngs(seed):
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


def initial_params(config):
    init_rng, _ = _rngs(config.seed)
    return init_params(init_rng, config.L, config.T, config.k, config.C, config.variant)


def batch_gradient(params, x, y):
    """Mean-squared-error loss and parameter gradients for one batch."""
    pred, cache = forward(x, params)
    loss, grad = mse_loss_and_grad(pred, y)
    return loss, arma_backward(grad, cache, params)


def _check_windows(windows, config, name):
    if len(windows) == 0:
        raise ContractError(f"{name} window set is empty")
    if windows.L != config.L or windows.T != config.T or windows.channels != config.C:
        raise ContractError(
            f"{name} windows have (L, T, C) = ({windows.L}, {windows.T}, {windows.channels}), "
            f"config expects ({config.L}, {config.T}, {config.C})"
        )


def train(config, train_windows, val_windows, on_epoch=None):
    """Train with AdamW and early stopping on validation MSE.

    Returns ``(best_params, logs)`` where ``best_params`` scored the lowest
    validation MSE. Raises :class:`DivergenceError` on a non-finite loss.
    """
    init_rng, shuffle_rng = _rngs(config.seed)
    params = init_params(init_rng, config.L, config.T, config.k, config.C, config.variant)
    logs = []
    if config.max_epochs == 0:
        return params, logs
    _check_windows(train_windows, config, "train")
    _check_windows(val_windows, config, "val")

    opt = AdamW(config.optim_config())
    X, Y = train_windows.x, train_windows.y
    n = len(train_windows)
    best, best_mse, stale = params, np.inf, 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            try:
                loss, grads = batch_gradient(params, X[idx], Y[idx])
                if not np.isfinite(loss):
                    raise NumericError("non-finite training loss")
                params = ArmaParams.from_arrays(opt.step(params.to_arrays(), grads))
            except NumericError as exc:
                raise DivergenceError(f"training diverged in epoch {epoch}: {exc}", best, logs) from exc
            total += loss * len(idx)
        val = evaluate(params, val_windows)
        entry = EpochLog(epoch, total / n, val.mse, val.mae, time.perf_counter() - t0)
        logs.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.debug("epoch %d train %.6f val mse %.6f", epoch, entry.train_loss, val.mse)
        if val.mse < best_mse:
            best, best_mse, stale = params, val.mse, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, logs


def predict(params, windows, batch=512):
    """Forecasts for every window plus their AR / MA shares in output units.

    Returns ``(y_pred, y_ar, y_ma)``, each (N, T, C), with ``y_ar + y_ma == y_pred``:
    ``y_ma`` is the MA horizon output carried through the RevIN rescaling and
    ``y_ar`` the remainder (AR output, output bias and the restored level).
    """
    preds, ars, mas = [], [], []
    for start in range(0, len(windows), batch):
        y_pred, cache = forward(windows.x[start:start + batch], params)
        st = cache.revin_state
        y_ma = cache.y_ma_fut / st.gamma * st.scale[..., None, :]
        preds.append(y_pred)
        mas.append(y_ma)
        ars.append(y_pred - y_ma)
    if not preds:
        empty = np.zeros((0, windows.T, windows.channels))
        return empty, empty, empty
    return np.concatenate(preds), np.concatenate(ars), np.concatenate(mas)


def evaluate(params, windows, batch=512):
    """MSE / MAE over all windows (in the space the windows are expressed in)."""
    if len(windows) == 0:
        raise ContractError("cannot evaluate on an empty window set")
    sq = ab = 0.0
    count = 0
    for start in range(0, len(windows), batch):
        y_pred, _ = forward(windows.x[start:start + batch], params)
        diff = y_pred - windows.y[start:start + batch]
        sq += float(np.sum(diff * diff))
        ab += float(np.sum(np.abs(diff)))
        count += diff.size
    return MetricsReport(mse=sq / count, mae=ab / count, n_windows=len(windows), n_values=count)


@dataclass
class Checkpoint:
    params: ArmaParams
    config: TrainConfig
    scaler: ScalerStats = None
    best_val: dict = None
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, checkpoint):
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": checkpoint.params.variant,
        "config": asdict(checkpoint.config),
        "best_val": checkpoint.best_val,
        "extra": checkpoint.extra,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for name, value in checkpoint.params.to_arrays().items():
        arrays[f"param/{name}"] = np.asarray(value, dtype="<f8")
    if checkpoint.scaler is not None:
        arrays["scaler/mean"] = np.asarray(checkpoint.scaler.mean, dtype="<f8")
        arrays["scaler/std"] = np.asarray(checkpoint.scaler.std, dtype="<f8")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, expect_variant=None):
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {name: npz[name] for name in npz.files}
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except (zipfile.BadZipFile, ValueError, OSError, EOFError, KeyError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if "meta" not in arrays:
        raise CheckpointError(f"{path}: missing metadata record")
    try:
        meta = json.loads(arrays["meta"].tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata") from exc
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format {meta.get('format')!r} version {meta.get('version')!r}"
        )
    if expect_variant is not None and meta["variant"] != expect_variant:
        raise VariantMismatchError(f"{path} holds a {meta['variant']!r} model, expected {expect_variant!r}")
    params_arrays = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    try:
        params = ArmaParams.from_arrays(params_arrays)
        config = TrainConfig(**meta["config"])
    except (KeyError, TypeError, ContractError, ConfigError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint contents ({exc})") from exc
    if params.variant != meta["variant"]:
        raise CheckpointError(f"{path}: metadata says {meta['variant']!r} but arrays form a {params.variant!r} model")
    scaler = None
    if "scaler/mean" in arrays:
        scaler = ScalerStats(arrays["scaler/mean"].astype(np.float64), arrays["scaler/std"].astype(np.float64))
    return Checkpoint(params, config, scaler, meta.get("best_val"), meta.get("extra") or {})
