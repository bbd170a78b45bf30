import numpy as np
import pytest

from armacast.errors import ConfigError, ContractError
from armacast.model import ArmaParams, arma_forward, init_params, revin_normalize
from armacast.probe import (
    KINDS,
    PEM_RIDGE,
    PemParams,
    eval_pem,
    extract_features,
    feature_maps,
    fit_pem,
    gen_target,
    pem_predict,
    run_probe,
)


@pytest.mark.parametrize("L,C", [(2, 2), (96, 7), (5, 3)])
def test_target_shapes_ranges_and_corners(L, C):
    lin = gen_target("linear_index", L, C).grid
    assert lin.shape == (L, C)
    assert np.all(lin[0] == 0) and np.all(lin[-1] == 1)
    grad = gen_target("gradation", L, C).grid
    assert grad[0, 0] == 0 and grad[L - 1, C - 1] == 1
    assert grad.min() >= 0 and grad.max() <= 1
    sin = gen_target("sinusoid", L, C).grid
    assert np.all(sin[0] == 0) and np.abs(sin).max() <= 1


def test_targets_depend_only_on_shape():
    for kind in KINDS:
        np.testing.assert_array_equal(gen_target(kind, 12, 3).grid, gen_target(kind, 12, 3).grid)
    assert gen_target("sinusoid", 8, 1).grid[2, 0] == pytest.approx(1.0)


def test_target_errors():
    with pytest.raises(ConfigError):
        gen_target("gradation", 10, 1)
    with pytest.raises(ConfigError):
        gen_target("checkerboard", 10, 2)


def params_with_kernels(ar_taps, ma_taps, L=8, T=2, C=3):
    arrays = init_params(0, L, T, ar_taps.shape[0], C).to_arrays()
    arrays.update(ar_taps=ar_taps, ma_taps=ma_taps)
    return ArmaParams.from_arrays(arrays)


def test_features_for_zero_and_identity_kernels(rng):
    x = rng.normal(size=(4, 8, 3))
    zero = params_with_kernels(np.zeros((3, 3)), np.zeros((3, 3)))
    ar, ma = extract_features(zero, x)
    assert not ar.any() and not ma.any()
    ident = np.zeros((3, 3))
    ident[1, 1] = 1.0
    ar, _ = extract_features(params_with_kernels(ident, np.zeros((3, 3))), x)
    np.testing.assert_array_equal(ar, revin_normalize(x)[0])


def test_features_match_forward_cache(rng):
    params = init_params(1, 8, 2, 3, 3)
    x = rng.normal(size=(5, 8, 3))
    ar, ma = extract_features(params, x)
    _, cache = arma_forward(x, params)
    np.testing.assert_array_equal(ar, cache.y_ar_hist)
    np.testing.assert_array_equal(ma, cache.y_ma_hist)
    maps = feature_maps(params, x, batch=2)
    assert maps.shape == (5, 8, 3, 2)
    np.testing.assert_array_equal(maps[..., 1], cache.y_ma_hist)
    cnn_ar, cnn_ma = extract_features(params.without_ma(), x)
    assert cnn_ma is None
    np.testing.assert_array_equal(cnn_ar, ar)
    assert feature_maps(params.without_ma(), x).shape == (5, 8, 3, 1)


def normal_equation_oracle(X, Y, ridge):
    """Ridge weights via an explicit inverse of the regularized Gram matrix."""
    return np.linalg.inv(X.T @ X + ridge * np.eye(X.shape[1])) @ X.T @ Y


def test_fit_pem_matches_normal_equations(rng):
    X = rng.normal(size=(40, 5))
    Y = X @ rng.normal(size=(5, 3)) + 0.1 * rng.normal(size=(40, 3))
    pem = fit_pem(X, Y, ridge=0.5)
    np.testing.assert_allclose(pem.weights.T, normal_equation_oracle(X, Y, 0.5), rtol=1e-10, atol=1e-12)
    assert not pem.bias.any()


def test_fit_pem_shared_target_matches_tiled(rng):
    X = rng.normal(size=(30, 6))
    y = rng.normal(size=4)
    shared = fit_pem(X, y)
    tiled = fit_pem(X, np.tile(y, (30, 1)))
    np.testing.assert_allclose(shared.weights, tiled.weights, rtol=1e-10, atol=1e-12)


def test_fit_pem_with_intercept_matches_augmented_oracle(rng):
    X = rng.normal(size=(50, 4)) + 3.0
    Y = X @ rng.normal(size=(4, 2)) + np.array([1.0, -2.0])
    pem = fit_pem(X, Y, ridge=1e-8, fit_intercept=True)
    np.testing.assert_allclose(pem_predict(pem, X), Y, atol=1e-6)


def test_fit_pem_zero_target_gives_zero_weights(rng):
    pem = fit_pem(rng.normal(size=(25, 8)), np.zeros((25, 3)))
    assert np.linalg.norm(pem.weights) < 1e-3


def test_fit_pem_recovers_a_feature_coordinate(rng):
    X = rng.normal(size=(60, 10))
    pem = fit_pem(X, X[:, [4]])
    assert eval_pem(pem, X, X[:, [4]]) < 1e-6


def test_fit_pem_rank_deficient(rng):
    X = rng.normal(size=(20, 3))
    X = np.column_stack([X, X[:, 0]])  # duplicate column
    pem = fit_pem(X, X[:, :1] * 2.0, ridge=PEM_RIDGE)
    assert np.all(np.isfinite(pem.weights))
    assert eval_pem(pem, X, X[:, :1] * 2.0) < 1e-5


def test_fit_pem_shape_errors(rng):
    with pytest.raises(ContractError):
        fit_pem(rng.normal(size=(5,)), np.zeros(5))
    with pytest.raises(ContractError):
        fit_pem(rng.normal(size=(5, 2)), np.zeros((4, 1)))


def test_eval_pem_perfect_and_known():
    pem = PemParams(np.eye(2), np.zeros(2))
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert eval_pem(pem, X, X) == 0.0
    assert eval_pem(pem, X, X + 0.5) == pytest.approx(0.5)


def test_run_probe_needs_a_window_independent_feature(rng):
    # fresh init: no biases, and RevIN features sum to zero, so no constant pattern is reachable
    params = init_params(2, 12, 3, 3, 2)
    series = np.cumsum(rng.normal(size=(300, 2)), axis=0)
    x = np.lib.stride_tricks.sliding_window_view(series, 12, axis=0).swapaxes(1, 2)
    out = run_probe(params, x[:200], x[200:], "linear_index")
    assert out["mae"] > 0.1


def test_run_probe_frozen_contract_and_fields(rng):
    arrays = init_params(2, 12, 3, 3, 2).to_arrays()
    arrays.update(ar_bias=np.array(0.3), ma_bias=np.array(-0.2))  # trained models carry conv biases
    params = ArmaParams.from_arrays(arrays)
    before = {k: v.copy() for k, v in params.to_arrays().items()}
    series = np.cumsum(rng.normal(size=(400, 2)), axis=0)
    x = np.lib.stride_tricks.sliding_window_view(series, 12, axis=0).swapaxes(1, 2)
    out = run_probe(params, x[:250], x[250:], "linear_index", seed=3)
    for name, v in params.to_arrays().items():
        assert v.tobytes() == before[name].tobytes()
    assert set(out) >= {"kind", "mae", "control_mae", "L", "C"}
    assert (out["L"], out["C"], out["n_train"], out["n_test"]) == (12, 2, 250, len(x) - 250)
    # the fixed row layout lets the readout place each target value; shuffling rows breaks it
    assert out["mae"] < 0.2 * out["control_mae"]
    assert run_probe(params, x[:250], x[250:], "linear_index", seed=3) == out
