import time

import numpy as np
import pytest

from congestion_lab.errors import ConvergenceError, FitTimeout
from congestion_lab.forecasters.svr import (DegenerateBandwidth, SvrModel, graph_features, rbf_kernel,
                                            solve_dual, svr_fit, svr_predict, svr_predict_many)
from congestion_lab.series_store import SampleGrid, window

from conftest import day_matrix
from svr_oracle import best_bias, dual_beta, rbf, reference_fit

pytest.importorskip("cvxopt")


def toy(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, 10)
    return x, np.sin(x) + 0.1 * rng.normal(size=10)


def full_beta(model, X):
    """Coefficient of every training row (zero for non-support rows)."""
    Xs = model.standardize(X.reshape(len(X), -1))
    beta = np.zeros(len(Xs))
    for c, sv in zip(model.coefficients, model.support_vectors):
        beta[np.argmin(((Xs - sv) ** 2).sum(1))] = c
    return beta, Xs


def kkt_check(model, X, y, tol=1e-5):
    beta, Xs = full_beta(model, X)
    zs = (y - model.target_mean) / model.target_scale
    r = zs - (rbf_kernel(Xs, model.support_vectors, model.sigma) @ model.coefficients + model.bias)
    inside = np.abs(r) < model.epsilon - tol
    return abs(beta.sum()), np.abs(beta).max(initial=0) - model.C, np.abs(beta[inside]).max(initial=0)


@pytest.mark.parametrize("seed", range(20))
def test_toy_matches_dual_oracle(seed):
    x, y = toy(seed)
    model = svr_fit(x[:, None], y, C=1.0, epsilon=0.1, sigma=1.0)
    ref, _, _ = reference_fit(x[:, None], y, 1.0, 0.1, 1.0)
    grid = np.linspace(-2.5, 2.5, 41)[:, None]
    assert np.max(np.abs(svr_predict_many(model, x[:, None]) - ref(x[:, None]))) <= 1e-3
    assert np.max(np.abs(svr_predict_many(model, grid) - ref(grid))) <= 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_auto_bandwidth_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    X = rng.normal(size=(25, 3)) * [1, 10, 0.1]
    y = X[:, 0] + np.sin(X[:, 1] / 5) + 0.1 * rng.normal(size=25)
    model = svr_fit(X, y, C=2.0, epsilon=0.05)
    ref, _, _ = reference_fit(X, y, 2.0, 0.05, "auto")
    assert np.max(np.abs(svr_predict_many(model, X) - ref(X))) <= 1e-3


def test_solve_dual_against_oracle_beta():
    x, y = toy(7)
    K = rbf(x[:, None], x[:, None], 1.0)
    beta, b, _, viol = solve_dual(K, y, 1.0, 0.1, tol=1e-8)
    ob = dual_beta(K, y, 1.0, 0.1)
    lo, hi = best_bias(K, y, ob, 0.1)[1]
    assert viol < 1e-8
    assert np.max(np.abs(K @ beta - K @ ob)) < 1e-5
    assert lo - 1e-5 <= b <= hi + 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_kkt_suite(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 120))
    X = rng.normal(size=(n, 2))
    y = X[:, 0] ** 2 + rng.normal(scale=0.3, size=n)
    C = float(rng.choice([0.1, 1.0, 10.0]))
    model = svr_fit(X, y, C=C, epsilon=0.1)
    assert model.kkt_violation < 1e-3
    total, box, inside = kkt_check(model, X, y)
    assert total <= 1e-8 and box <= 1e-12 and inside <= 1e-6


def test_constant_targets():
    X = np.linspace(0, 1, 12)[:, None]
    model = svr_fit(X, np.full(12, 4.2), epsilon=0.1)
    assert len(model.coefficients) == 0
    assert np.all(svr_predict_many(model, X) == 4.2)
    assert svr_predict(model, [0.5]) == 4.2


def test_single_coefficient_self_similarity():
    model = SvrModel(np.array([1.0]), np.array([[0.3, -0.2]]), 0.0, 0.7)
    assert svr_predict(model, [0.3, -0.2]) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError, match="features"):
        svr_predict(model, [1.0])


def test_affine_feature_invariance():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 4))
    y = X @ [1, -1, 0.5, 0] + 0.1 * rng.normal(size=60)
    Q = rng.normal(size=(15, 4))
    a = svr_predict_many(svr_fit(X, y), Q)
    b = svr_predict_many(svr_fit(X * 10, y), Q * 10)
    assert np.max(np.abs(a - b)) <= 1e-6


def test_degenerate_bandwidth_and_errors():
    with pytest.raises(DegenerateBandwidth):
        svr_fit(np.ones((5, 2)), np.arange(5.0))
    with pytest.raises(ValueError):
        svr_fit(np.ones((1, 2)), np.ones(1))
    with pytest.raises(ValueError):
        svr_fit(np.arange(4.0)[:, None], np.arange(4.0), C=0)


def test_non_convergence_reports_violation():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    with pytest.raises(ConvergenceError) as info:
        svr_fit(X, rng.normal(size=50), max_iter=3)
    assert info.value.violation > 0


def test_time_budget():
    rng = np.random.default_rng(0)
    K = rbf_kernel(rng.normal(size=(400, 3)), rng.normal(size=(400, 3)), 1.0)
    with pytest.raises(FitTimeout):
        solve_dual(K @ K.T, rng.normal(size=400), 100.0, 0.0, 1e-12, deadline=time.monotonic() - 1)


def test_row_cap_thins_uniformly():
    X = np.linspace(0, 10, 1000)[:, None]
    model = svr_fit(X, np.sin(X[:, 0]), max_rows=100)
    assert model.n_train == 100


def test_graph_features_requires_neighbor_column(triangle):
    m = day_matrix(np.arange(30, dtype=float).reshape(10, 3), ("A", "B", "C"))
    g = SampleGrid(0.5, 1, 0.5)
    assert graph_features(window(m, "B", g, True, triangle)).features.shape[1] == 3
    with pytest.raises(ValueError, match="neighbour"):
        graph_features(window(m, "B", g))


def test_model_dict_round_trip():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    model = svr_fit(X, X[:, 0])
    again = SvrModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(svr_predict_many(model, X), svr_predict_many(again, X))
