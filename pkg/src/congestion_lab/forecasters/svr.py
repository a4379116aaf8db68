"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual is solved with a sequential minimal optimization loop over the
2n-variable form used by LIBSVM: ``a = [alpha; alpha*]`` with labels
``y = [+1; -1]``, minimising ``0.5 a'Qa + p'a`` subject to ``y'a = 0`` and
``0 <= a <= C``, where ``Q_ij = y_i y_j K(x_i, x_j)`` and
``p = [eps - z; eps + z]``. Working pairs are chosen by maximal violation
with second-order gain (Fan, Chen and Lin, 2005).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError, FitTimeout, NumericalError
from ..series_store import WindowedDataset

TAU = 1e-12


class DegenerateBandwidth(NumericalError):
    """The median-heuristic bandwidth is zero because all rows coincide."""


@dataclass
class SvrModel:
    coefficients: np.ndarray
    support_vectors: np.ndarray
    bias: float
    sigma: float
    C: float = 1.0
    epsilon: float = 0.1
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None
    target_mean: float = 0.0
    target_scale: float = 1.0
    n_train: int = 0
    iterations: int = 0
    kkt_violation: float = 0.0

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        sv = np.asarray(self.support_vectors, dtype=np.float64)
        if self.feature_mean is not None:
            width = len(self.feature_mean)
        else:
            width = sv.shape[-1] if sv.ndim == 2 else max(1, sv.size // max(1, len(self.coefficients)))
        self.support_vectors = sv.reshape(len(self.coefficients), width)
        if self.feature_mean is None:
            self.feature_mean = np.zeros(width)
        if self.feature_scale is None:
            self.feature_scale = np.ones(width)
        self.feature_mean = np.asarray(self.feature_mean, dtype=np.float64)
        self.feature_scale = np.asarray(self.feature_scale, dtype=np.float64)

    @property
    def n_features(self) -> int:
        return len(self.feature_mean)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_scale

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "support_vectors": self.support_vectors.tolist(),
            "bias": self.bias,
            "sigma": self.sigma,
            "C": self.C,
            "epsilon": self.epsilon,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
            "n_train": self.n_train,
            "iterations": self.iterations,
            "kkt_violation": self.kkt_violation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SvrModel":
        width = len(data["feature_mean"])
        svs = np.asarray(data["support_vectors"], dtype=np.float64).reshape(-1, width)
        return cls(np.asarray(data["coefficients"], dtype=np.float64), svs,
                   float(data["bias"]), float(data["sigma"]), float(data["C"]),
                   float(data["epsilon"]), np.asarray(data["feature_mean"]),
                   np.asarray(data["feature_scale"]), float(data["target_mean"]),
                   float(data["target_scale"]), int(data["n_train"]),
                   int(data["iterations"]), float(data["kkt_violation"]))


def sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d2, 0.0)


def rbf_kernel(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-sq_distances(A, B) / (2.0 * sigma * sigma))


def median_heuristic(X: np.ndarray, d2: np.ndarray | None = None) -> float:
    if d2 is None:
        d2 = sq_distances(X, X)
    iu = np.triu_indices(len(X), k=1)
    return float(np.sqrt(np.median(d2[iu]))) if iu[0].size else 0.0


def thin_rows(n: int, cap: int | None) -> np.ndarray:
    """Evenly spaced row indices keeping at most ``cap`` of ``n`` rows."""
    if cap is None or n <= cap:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, cap)).astype(np.int64))


def _scale(values: np.ndarray, axis=None):
    mean = values.mean(axis=axis)
    std = values.std(axis=axis)
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return mean, std


def solve_dual(K: np.ndarray, z: np.ndarray, C: float, epsilon: float, tol: float = 1e-7,
               max_iter: int | None = None, deadline: float | None = None):
    """SMO on the epsilon-SVR dual for a precomputed kernel matrix.

    Returns ``(beta, bias, iterations, violation)`` with ``beta = alpha - alpha*``.
    """
    n = len(z)
    l = 2 * n
    y = np.concatenate([np.ones(n), -np.ones(n)])
    a = np.zeros(l)
    G = np.concatenate([epsilon - z, epsilon + z])
    diag = np.diag(K).copy()
    if max_iter is None:
        max_iter = max(100_000, 200 * l)
    it = 0
    violation = np.inf
    pos = y > 0
    while True:
        minus_yG = -y * G
        up = np.where(pos, a < C, a > 0)
        low = np.where(pos, a > 0, a < C)
        vals_up = np.where(up, minus_yG, -np.inf)
        i = int(np.argmax(vals_up))
        g_max = vals_up[i]
        g_min = np.min(np.where(low, minus_yG, np.inf))
        violation = float(g_max - g_min)
        if violation < tol:
            break
        if it >= max_iter:
            raise ConvergenceError(f"SMO did not converge in {max_iter} iterations "
                                   f"(KKT violation {violation:.3g})", violation)
        if deadline is not None and it % 256 == 0 and time.monotonic() > deadline:
            raise FitTimeout(f"SVR fit exceeded its time budget after {it} iterations")
        ii = i % n
        k_i = K[ii]
        b = g_max - minus_yG
        cand = low & (b > 0)
        quad = diag[ii] + np.tile(diag, 2) - 2.0 * np.tile(k_i, 2)
        quad = np.where(quad > 0, quad, TAU)
        gain = np.where(cand, -(b * b) / quad, np.inf)
        j = int(np.argmin(gain))
        jj = j % n

        step = b[j] / quad[j]
        lim_i = C - a[i] if y[i] > 0 else a[i]
        lim_j = a[j] if y[j] > 0 else C - a[j]
        step = min(step, lim_i, lim_j)
        old_i, old_j = a[i], a[j]
        a[i] = old_i + y[i] * step
        a[j] = old_j - y[j] * step
        if step == lim_i:
            a[i] = C if y[i] > 0 else 0.0
        if step == lim_j:
            a[j] = 0.0 if y[j] > 0 else C
        a[i] = min(max(a[i], 0.0), C)
        a[j] = min(max(a[j], 0.0), C)
        d_i, d_j = a[i] - old_i, a[j] - old_j
        # G_t += Q_ti d_i + Q_tj d_j with Q_ts = y_t y_s K(t mod n, s mod n)
        col = y[i] * d_i * k_i + y[j] * d_j * K[jj]
        G += y * np.tile(col, 2)
        it += 1

    yG = y * G
    free = (a > 0) & (a < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        at_upper = a >= C
        ub_mask = np.where(at_upper, y < 0, y > 0)
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[~ub_mask].max() if (~ub_mask).any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else float(
            ub if np.isfinite(ub) else lb)
    beta = a[:n] - a[n:]
    return beta, -rho, it, violation


def svr_fit(train: WindowedDataset | np.ndarray, targets: np.ndarray | None = None, C: float = 1.0,
            epsilon: float = 0.1, sigma: float | str = "auto", *, tol: float = 1e-7,
            max_rows: int | None = 5000, max_iter: int | None = None,
            time_budget: float | None = None) -> SvrModel:
    """Fit on a windowed dataset (all feature columns) or on ``(X, targets)``.

    Features and targets are standardized first, so ``epsilon`` is measured in
    target standard deviations.
    """
    if isinstance(train, WindowedDataset):
        X, z = train.features, train.targets
    else:
        X, z = np.asarray(train, dtype=np.float64), np.asarray(targets, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    z = np.asarray(z, dtype=np.float64)
    if len(X) != len(z):
        raise ValueError("feature and target row counts differ")
    if len(z) < 2:
        raise ValueError("SVR needs at least two training rows")
    if C <= 0 or epsilon < 0:
        raise ValueError("need C > 0 and epsilon >= 0")
    keep = thin_rows(len(z), max_rows)
    X, z = X[keep], z[keep]

    f_mean, f_scale = _scale(X, axis=0)
    t_mean, t_scale = _scale(z)
    Xs = (X - f_mean) / f_scale
    zs = (z - t_mean) / t_scale
    d2 = sq_distances(Xs, Xs)
    if isinstance(sigma, str):
        if sigma != "auto":
            raise ValueError(f"sigma must be a positive number or 'auto', got {sigma!r}")
        sigma_val = median_heuristic(Xs, d2)
    else:
        sigma_val = float(sigma)
    if not sigma_val > 0:
        raise DegenerateBandwidth("degenerate kernel bandwidth: all training points coincide")
    K = np.exp(-d2 / (2.0 * sigma_val * sigma_val))
    deadline = time.monotonic() + time_budget if time_budget else None
    beta, bias, it, viol = solve_dual(K, zs, C, epsilon, tol, max_iter, deadline)
    sv = beta != 0
    return SvrModel(beta[sv], Xs[sv], float(bias), sigma_val, float(C), float(epsilon),
                    np.asarray(f_mean, dtype=np.float64), np.asarray(f_scale, dtype=np.float64),
                    float(t_mean), float(t_scale), int(len(z)), it, viol)


def svr_decision(model: SvrModel, X: np.ndarray) -> np.ndarray:
    """Kernel expansion plus bias in standardized target units."""
    Xs = model.standardize(X)
    if not len(model.coefficients):
        return np.full(len(Xs), model.bias)
    return rbf_kernel(Xs, model.support_vectors, model.sigma) @ model.coefficients + model.bias


def svr_predict_many(model: SvrModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None] if model.n_features == 1 else X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    return svr_decision(model, X) * model.target_scale + model.target_mean


def svr_predict(model: SvrModel, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {x.shape[-1]}")
    return float(svr_predict_many(model, x.reshape(1, -1))[0])


def graph_features(train: WindowedDataset) -> WindowedDataset:
    """Graph-SVR uses the lag vector plus the neighbour-sum column unchanged."""
    if not train.has_neighbor_sum or train.features.shape[1] != train.lags + 1:
        raise ValueError(f"dataset for {train.target_node} has no neighbour-sum column")
    return train
