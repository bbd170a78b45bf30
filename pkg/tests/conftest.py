import os
from pathlib import Path

import numpy as np
import pytest

REPO_DATA = Path(__file__).resolve().parent.parent / "data"

_CRITERIA = []


def central_difference(f, arr, h=1e-5):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        fp = f()
        arr[idx] = orig - h
        fm = f()
        arr[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-4, abs_small=1e-7, name=""):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape, name
    mag = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    ok = (err <= rel * mag) | ((mag < 1.0) & (err < abs_small))
    if not np.all(ok):
        bad = np.argwhere(~ok)[0]
        raise AssertionError(
            f"{name}: gradient mismatch at {tuple(bad)}: analytic {analytic[tuple(bad)]!r} "
            f"numeric {numeric[tuple(bad)]!r}"
        )


def brute_conv(x, taps, bias):
    """Same-padded cross-correlation by direct summation with explicit bounds checks."""
    L, C = x.shape
    k = taps.shape[0]
    p = (k - 1) // 2
    out = np.full((L, C), float(bias))
    for i in range(L):
        for j in range(C):
            for a in range(k):
                for b in range(k):
                    r, c = i + a - p, j + b - p
                    if 0 <= r < L and 0 <= c < C:
                        out[i, j] += taps[a, b] * x[r, c]
    return out


def reference_forecast(x, arrays, eps=1e-5):
    """Straight-line re-derivation of the block's forecast for one window from raw arrays."""
    L, C = x.shape
    mean = np.array([sum(x[:, j]) / L for j in range(C)])
    std = np.array([np.sqrt(sum((x[:, j] - mean[j]) ** 2) / L) for j in range(C)])
    g, b = arrays["revin_gamma"], arrays["revin_beta"]
    xn = np.empty_like(x)
    for i in range(L):
        for j in range(C):
            xn[i, j] = g[j] * (x[i, j] - mean[j]) / (std[j] + eps) + b[j]
    ar_hist = brute_conv(xn, arrays["ar_taps"], arrays["ar_bias"])
    W_ar, sb_ar = arrays["ar_weights"], arrays["ar_step_bias"]
    T = W_ar.shape[0]
    y = np.zeros((T, C))
    for t in range(T):
        for j in range(C):
            y[t, j] = sb_ar[t] + sum(W_ar[t, i] * ar_hist[i, j] for i in range(L)) + arrays["out_bias"][t]
    if "ma_taps" in arrays:
        ma_hist = brute_conv(xn - ar_hist, arrays["ma_taps"], arrays["ma_bias"])
        W_ma, sb_ma = arrays["ma_weights"], arrays["ma_step_bias"]
        for t in range(T):
            for j in range(C):
                y[t, j] += sb_ma[t] + sum(W_ma[t, i] * ma_hist[i, j] for i in range(L))
    out = np.empty_like(y)
    for t in range(T):
        for j in range(C):
            out[t, j] = (y[t, j] - b[j]) / g[j] * (std[j] + eps) + mean[j]
    return out


def find_dataset(filename):
    """Benchmark CSV from $ARMA_DATA_DIR or the repo's data/ directory, else None."""
    roots = [Path(os.environ["ARMA_DATA_DIR"])] if os.environ.get("ARMA_DATA_DIR") else []
    for root in roots + [REPO_DATA]:
        if (root / filename).is_file():
            return root / filename
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA.append((marker.args[0], marker.args[1], rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid, title, outcome, detail in sorted(_CRITERIA):
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"{status} {cid} {title}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
