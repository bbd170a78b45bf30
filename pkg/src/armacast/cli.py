"""Command line entry point: ``armacast train|eval|ablate|probe|synth``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.
"""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import (
    SplitSpec,
    chronological_split,
    fit_scaler,
    load_csv,
    make_windows,
    standardize,
    synth_gas_analog,
    synth_trend_shift,
    write_csv,
)
from .errors import ConfigError, DataError, NumericError
from .metrics import component_correlations, naive_metrics
from .probe import KINDS, run_probe
from .trainer import Checkpoint, TrainConfig, evaluate, load_checkpoint, predict, save_checkpoint, train

log = logging.getLogger("armacast")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

CONFIG_KEYS = {
    "dataset": str,
    "L": int,
    "T": int,
    "k": int,
    "variant": str,
    "seed": int,
    "batch": int,
    "lr": float,
    "max_epochs": int,
    "patience": int,
    "split_fractions": list,
    "out_dir": str,
}
REQUIRED_KEYS = ("dataset", "L", "T")
SYNTH_KINDS = ("trend_shift", "gas_analog")


def _typecheck(key, value):
    expected = CONFIG_KEYS[key]
    if expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(f"config key {key!r} must be of type {expected.__name__}, got {value!r}")


def load_config(path):
    """Read and validate a JSON run configuration (unknown keys are errors)."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing config key(s): {', '.join(missing)}")
    for key, value in raw.items():
        _typecheck(key, value)
    fractions = raw.get("split_fractions", [0.7, 0.1, 0.2])
    if len(fractions) != 3 or not all(isinstance(f, (int, float)) and not isinstance(f, bool) for f in fractions):
        raise ConfigError("split_fractions must be a list of three numbers")
    raw["split_fractions"] = [float(f) for f in fractions]
    SplitSpec(*raw["split_fractions"])
    raw["_base_dir"] = str(Path(path).resolve().parent)
    return raw


def resolve_dataset(name, base_dir=None):
    """Find a dataset CSV: as given, next to the config, then under $ARMA_DATA_DIR."""
    candidates = [Path(name)]
    if base_dir is not None and not Path(name).is_absolute():
        candidates.append(Path(base_dir) / name)
    root = os.environ.get("ARMA_DATA_DIR")
    if root:
        candidates += [Path(root) / name, Path(root) / f"{name}.csv"]
    for cand in candidates:
        if cand.is_file():
            return cand
    raise DataError(f"dataset {name!r} not found (looked in: {', '.join(str(c) for c in candidates)})")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare(cfg):
    """Load, split and z-score the configured dataset; returns (table, splits, scaler)."""
    table = load_csv(resolve_dataset(cfg["dataset"], cfg.get("_base_dir")))
    train_t, val_t, test_t = chronological_split(table, SplitSpec(*cfg["split_fractions"]))
    scaler = fit_scaler(train_t)
    return table, [standardize(s, scaler) for s in (train_t, val_t, test_t)], scaler


def _train_config(cfg, variant, C):
    fields = {k: cfg[k] for k in ("L", "T", "k", "seed", "batch", "lr", "max_epochs", "patience") if k in cfg}
    return TrainConfig(C=C, variant=variant, **fields)


def _report(report):
    return {"mse": report.mse, "mae": report.mae, "n_windows": report.n_windows, "n_values": report.n_values}


def _fit_variant(cfg, variant, splits, scaler, out_dir):
    train_s, val_s, test_s = splits
    tc = _train_config(cfg, variant, train_s.n_channels)
    windows = [make_windows(s, tc.L, tc.T) for s in splits]
    for name, w in zip(("train", "val", "test"), windows):
        if len(w) == 0:
            raise DataError(f"{name} split has {w.values.shape[0]} rows, too few for L + T = {tc.L + tc.T}")
    params, logs = train(tc, windows[0], windows[1], on_epoch=lambda e: log.info(
        "%s epoch %d train %.5f val mse %.5f", variant, e.epoch, e.train_loss, e.val_mse))
    val = evaluate(params, windows[1])
    test = evaluate(params, windows[2])
    best_epoch = min(logs, key=lambda e: e.val_mse).epoch if logs else 0
    metrics = {
        "variant": variant,
        "dataset": cfg["dataset"],
        "L": tc.L,
        "T": tc.T,
        "k": tc.k,
        "seed": tc.seed,
        "epochs_run": len(logs),
        "best_epoch": best_epoch,
        "val": _report(val),
        "test": _report(test),
        "naive_test": _report(naive_metrics(windows[2])),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    extra = {"dataset": cfg["dataset"], "split_fractions": cfg["split_fractions"], "channel_names": splits[0].channel_names}
    save_checkpoint(out_dir / "checkpoint.npz", Checkpoint(params, tc, scaler, _report(val), extra))
    with open(out_dir / "epoch_log.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_mse", "val_mae", "wall_time"])
        for e in logs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_mse), repr(e.val_mae), f"{e.wall_time:.3f}"])
    return metrics


def _out_dir(args, cfg):
    out = args.out or cfg.get("out_dir")
    if not out:
        raise ConfigError("no output directory: pass --out or set out_dir in the config")
    return Path(out)


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(args, cfg)
    _, splits, scaler = _prepare(cfg)
    metrics = _fit_variant(cfg, cfg.get("variant", "arma"), splits, scaler, out)
    _write_json(out / "metrics.json", metrics)
    print(json.dumps({"test_mse": metrics["test"]["mse"], "test_mae": metrics["test"]["mae"], "out": str(out)}))
    return EXIT_OK


def cmd_ablate(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(args, cfg)
    _, splits, scaler = _prepare(cfg)
    results = {v: _fit_variant(cfg, v, splits, scaler, out / v) for v in ("arma", "cnn_only")}
    a, c = results["arma"]["test"], results["cnn_only"]["test"]
    summary = {
        "dataset": cfg["dataset"],
        "L": results["arma"]["L"],
        "T": results["arma"]["T"],
        "seed": results["arma"]["seed"],
        "arma": results["arma"],
        "cnn_only": results["cnn_only"],
        "difference": {"mse": a["mse"] - c["mse"], "mae": a["mae"] - c["mae"]},
    }
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", summary)
    print(json.dumps({"arma_mse": a["mse"], "cnn_only_mse": c["mse"], "out": str(out)}))
    return EXIT_OK


def _split_for_checkpoint(ckpt, csv_path, split):
    table = load_csv(csv_path)
    if table.n_channels != ckpt.config.C:
        raise DataError(f"{csv_path} has {table.n_channels} channels, checkpoint model expects {ckpt.config.C}")
    fractions = ckpt.extra.get("split_fractions", [0.7, 0.1, 0.2])
    parts = dict(zip(("train", "val", "test"), chronological_split(table, SplitSpec(*fractions))))
    if ckpt.scaler is None:
        raise DataError("checkpoint carries no scaler statistics")
    return standardize(parts[split], ckpt.scaler), {k: standardize(v, ckpt.scaler) for k, v in parts.items()}


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    part, _ = _split_for_checkpoint(ckpt, args.csv, args.split)
    windows = make_windows(part, ckpt.config.L, ckpt.config.T)
    if len(windows) == 0:
        raise DataError(f"{args.split} split is too short for L + T = {ckpt.config.L + ckpt.config.T}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(ckpt.params, windows)
    r_ar, r_ma = component_correlations(ckpt.params, windows)
    metrics = {
        "variant": ckpt.params.variant,
        "split": args.split,
        "L": ckpt.config.L,
        "T": ckpt.config.T,
        **_report(report),
        "r_ar": r_ar,
        "r_ma": r_ma,
        "naive": _report(naive_metrics(windows)),
    }
    _write_json(out / "metrics.json", metrics)
    y_pred, y_ar, y_ma = predict(ckpt.params, windows)
    names = part.channel_names
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_origin", "step", "channel", "y_true", "y_pred", "y_ar", "y_ma"])
        for n, origin in enumerate(windows.origins):
            for t in range(windows.T):
                for c in range(windows.channels):
                    w.writerow([int(origin), t, names[c], repr(float(windows.y[n, t, c])), repr(float(y_pred[n, t, c])),
                                repr(float(y_ar[n, t, c])), repr(float(y_ma[n, t, c]))])
    print(json.dumps({"mse": report.mse, "mae": report.mae, "out": str(out)}))
    return EXIT_OK


def cmd_probe(args):
    ckpt = load_checkpoint(args.checkpoint)
    _, parts = _split_for_checkpoint(ckpt, args.csv, "test")
    L = ckpt.config.L
    train_w = make_windows(parts["train"], L, 0, stride=args.stride)
    test_w = make_windows(parts["test"], L, 0, stride=args.stride)
    if len(train_w) == 0 or len(test_w) == 0:
        raise DataError(f"train/test splits too short for L = {L}")
    kinds = KINDS if args.kind == "all" else (args.kind,)
    results = [run_probe(ckpt.params, train_w.x, test_w.x, kind, seed=args.seed) for kind in kinds]
    payload = results[0] if len(results) == 1 else results
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_synth(args):
    if args.n < 1:
        raise ConfigError("--n must be positive")
    if args.kind == "trend_shift":
        table = synth_trend_shift(args.seed, args.n, channels=args.channels, shift_at=args.shift_at,
                                  magnitude=args.magnitude)
    else:
        table = synth_gas_analog(args.seed, args.n)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(table, args.out)
    print(json.dumps({"rows": table.n_rows, "channels": table.n_channels, "out": str(args.out)}))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="armacast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model variant from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split of a CSV")
    p.add_argument("checkpoint")
    p.add_argument("csv")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train ARMA and CNN-only variants side by side")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("probe", help="positional-information probe on a checkpoint's conv features")
    p.add_argument("checkpoint")
    p.add_argument("csv")
    p.add_argument("--kind", choices=(*KINDS, "all"), default="all")
    p.add_argument("--seed", type=int, default=0, help="seed of the shuffled-feature control")
    p.add_argument("--stride", type=int, default=1, help="window stride for probe fitting")
    p.add_argument("--out", help="write the probe JSON here as well as to stdout")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("synth", help="write a synthetic series as CSV")
    p.add_argument("kind", choices=SYNTH_KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=1, help="trend_shift only")
    p.add_argument("--shift-at", type=int, help="trend_shift only; default n // 2")
    p.add_argument("--magnitude", type=float, default=0.02, help="trend_shift only")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
