"""ARIMA(p, d, q) by conditional least squares.

AR-only orders are a single OLS regression. With MA terms the weights come
from Hannan-Rissanen style iterations: a long autoregression supplies first
innovation estimates, then lagged values and lagged innovations are
regressed jointly and the innovations refiltered until the weights settle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_P = 3
MAX_Q = 3
MAX_D = 2


@dataclass
class ArimaModel:
    order: tuple[int, int, int] = (1, 0, 0)
    ar_weights: np.ndarray = field(default_factory=lambda: np.zeros(1))
    ma_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    last_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    last_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nonstationary: bool = False
    degenerate: bool = False
    iterations: int = 0

    def __post_init__(self):
        self.order = tuple(int(v) for v in self.order)
        self.ar_weights = np.asarray(self.ar_weights, dtype=np.float64).reshape(-1)
        self.ma_weights = np.asarray(self.ma_weights, dtype=np.float64).reshape(-1)
        self.residuals = np.asarray(self.residuals, dtype=np.float64).reshape(-1)
        self.last_values = np.asarray(self.last_values, dtype=np.float64).reshape(-1)
        self.last_residuals = np.asarray(self.last_residuals, dtype=np.float64).reshape(-1)
        p, _, q = self.order
        if len(self.ar_weights) != p or len(self.ma_weights) != q:
            raise ValueError(f"weights do not match order {self.order}")
        if p and not self.nonstationary:
            self.nonstationary = not _is_stationary(self.ar_weights)

    @property
    def mean(self) -> float:
        """Process mean of the differenced series (NaN at a unit root)."""
        denom = 1.0 - float(self.ar_weights.sum())
        return self.intercept / denom if abs(denom) > 1e-12 else float("nan")

    def to_dict(self) -> dict:
        return {
            "order": list(self.order),
            "ar_weights": self.ar_weights.tolist(),
            "ma_weights": self.ma_weights.tolist(),
            "intercept": self.intercept,
            "last_values": self.last_values.tolist(),
            "last_residuals": self.last_residuals.tolist(),
            "nonstationary": self.nonstationary,
            "degenerate": self.degenerate,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ArimaModel":
        return cls(tuple(data["order"]), np.asarray(data["ar_weights"]),
                   np.asarray(data["ma_weights"]), float(data["intercept"]),
                   np.zeros(0), np.asarray(data["last_values"]),
                   np.asarray(data["last_residuals"]), bool(data["nonstationary"]),
                   bool(data["degenerate"]), int(data.get("iterations", 0)))


def _is_stationary(ar: np.ndarray) -> bool:
    if not len(ar):
        return True
    # Roots of z^p - phi_1 z^(p-1) - ... - phi_p must lie inside the unit circle.
    roots = np.roots(np.concatenate([[1.0], -ar]))
    return bool(np.all(np.abs(roots) < 1.0))


def difference(series: np.ndarray, d: int) -> np.ndarray:
    out = np.asarray(series, dtype=np.float64)
    for _ in range(d):
        out = np.diff(out)
    return out


def _lag_matrix(z: np.ndarray, e: np.ndarray, p: int, q: int, start: int):
    rows = len(z) - start
    cols = [np.ones(rows)]
    cols += [z[start - k:len(z) - k] for k in range(1, p + 1)]
    cols += [e[start - k:len(z) - k] for k in range(1, q + 1)]
    return np.column_stack(cols), z[start:]


def _filter_residuals(z: np.ndarray, c: float, ar: np.ndarray, ma: np.ndarray, start: int) -> np.ndarray:
    """Innovations of one segment, zero before ``start``."""
    p, q = len(ar), len(ma)
    e = np.zeros(len(z))
    if q == 0:
        pred = np.full(len(z) - start, c)
        for k in range(p):
            pred = pred + ar[k] * z[start - 1 - k:len(z) - 1 - k]
        e[start:] = z[start:] - pred
        return e
    for t in range(start, len(z)):
        pred = c
        for k in range(p):
            pred += ar[k] * z[t - 1 - k]
        for k in range(q):
            if t - 1 - k >= 0:
                pred += ma[k] * e[t - 1 - k]
        e[t] = z[t] - pred
    return e


def _stack(z_segs, e_segs, p, q, start):
    Xs, ys = [], []
    for z, e in zip(z_segs, e_segs):
        if len(z) > start:
            X, y = _lag_matrix(z, e, p, q, start)
            Xs.append(X)
            ys.append(y)
    return np.vstack(Xs), np.concatenate(ys)


def arima_fit(series: np.ndarray | Sequence[np.ndarray], order: tuple[int, int, int] = (1, 0, 0), *,
              tol: float = 1e-6, max_iter: int = 200) -> ArimaModel:
    """Estimate an ARIMA model from one series or a list of contiguous segments.

    Segments (for example separate days) are differenced and regressed
    independently, so no lag ever straddles a gap. Forecast state is taken
    from the last segment.
    """
    p, d, q = (int(v) for v in order)
    if not (0 <= p <= MAX_P and 0 <= d <= MAX_D and 0 <= q <= MAX_Q):
        raise ValueError(f"unsupported order {order}: need p<={MAX_P}, d<={MAX_D}, q<={MAX_Q}")
    if isinstance(series, np.ndarray) and series.ndim == 1:
        segments = [series]
    elif isinstance(series, (list, tuple)) and series and np.ndim(series[0]) == 0:
        segments = [np.asarray(series, dtype=np.float64)]
    else:
        segments = [np.asarray(s, dtype=np.float64) for s in series]
    segments = [s for s in segments if len(s) > p + d + q]
    total = sum(len(s) for s in segments)
    if total <= p + d + q + 10:
        raise ValueError(f"series too short for ARIMA{order}: need more than {p + d + q + 10} points")
    if any(np.isnan(s).any() for s in segments):
        raise ValueError("series contains missing values; split it into segments first")

    z_segs = [difference(s, d) for s in segments]
    z_all = np.concatenate(z_segs)
    scale = max(1.0, float(np.abs(z_all).max()))
    if np.ptp(z_all) <= 1e-12 * scale:
        # Differencing left a constant: nothing to regress on.
        const = float(z_all[0])
        model = ArimaModel((p, d, q), np.zeros(p), np.zeros(q), const, np.zeros(len(z_all)),
                           _tail(segments[-1], p + d), np.zeros(q), degenerate=True)
        return model

    it = 0
    if q == 0:
        X, y = _stack(z_segs, z_segs, p, 0, p)
        coef = np.linalg.lstsq(X, y, rcond=None)[0]
        c, ar, ma = float(coef[0]), coef[1:p + 1], np.zeros(0)
    else:
        m = min(max(p + q + 5, 10), max(1, min(len(z) for z in z_segs) // 4))
        Xl, yl = _stack(z_segs, z_segs, m, 0, m)
        long_coef = np.linalg.lstsq(Xl, yl, rcond=None)[0]
        e_segs = [_filter_residuals(z, long_coef[0], long_coef[1:], np.zeros(0), m) for z in z_segs]
        start = max(p, q, m)
        X, y = _stack(z_segs, e_segs, p, q, start)
        coef = np.linalg.lstsq(X, y, rcond=None)[0]
        start = max(p, q)
        for it in range(1, max_iter + 1):
            c, ar, ma = float(coef[0]), coef[1:p + 1], coef[p + 1:]
            e_segs = [_filter_residuals(z, c, ar, ma, p) for z in z_segs]
            X, y = _stack(z_segs, e_segs, p, q, start)
            new = np.linalg.lstsq(X, y, rcond=None)[0]
            change = float(np.max(np.abs(new - coef)))
            coef = new
            if change < tol or not np.all(np.isfinite(coef)):
                break
        c, ar, ma = float(coef[0]), coef[1:p + 1], coef[p + 1:]

    e_segs = [_filter_residuals(z, c, ar, ma, p) for z in z_segs]
    resid = np.concatenate([e[p:] for e in e_segs])
    model = ArimaModel((p, d, q), np.array(ar, dtype=np.float64), np.array(ma, dtype=np.float64),
                       c, resid, _tail(segments[-1], p + d), _tail(e_segs[-1], q), iterations=it)
    if model.nonstationary:
        warnings.warn(f"ARIMA{model.order} estimate is not stationary "
                      f"(AR weights {np.round(model.ar_weights, 4).tolist()})", RuntimeWarning)
    return model


def _tail(values: np.ndarray, k: int) -> np.ndarray:
    return np.asarray(values[len(values) - k:] if k else values[:0], dtype=np.float64)


def _recurse(model: ArimaModel, z_hist: np.ndarray, e_hist: np.ndarray, steps: int) -> np.ndarray:
    p, _, q = model.order
    z = list(z_hist[len(z_hist) - p:]) if p else []
    e = list(e_hist[len(e_hist) - q:]) if q else []
    out = np.empty(steps)
    for h in range(steps):
        pred = model.intercept
        for k in range(p):
            pred += model.ar_weights[k] * z[-1 - k]
        for k in range(q):
            if k < len(e):
                pred += model.ma_weights[k] * e[-1 - k]
        out[h] = pred
        if p:
            z.append(pred)
        if q:
            e.append(0.0)  # future innovations have zero expectation
    return out


def _integrate(path: np.ndarray, history: np.ndarray, d: int) -> np.ndarray:
    levels = [difference(history, k)[-1] for k in range(d)]
    for k in range(d - 1, -1, -1):
        path = levels[k] + np.cumsum(path)
    return path


def arima_forecast(model: ArimaModel, steps: int) -> np.ndarray:
    """Forecast ``steps`` ahead from the end of the training data."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    _, d, _ = model.order
    z_hist = difference(model.last_values, d)
    path = _recurse(model, z_hist, model.last_residuals, steps)
    return _integrate(path, model.last_values, d) if d else path


def arima_forecast_from(model: ArimaModel, history: np.ndarray, steps: int) -> np.ndarray:
    """Forecast ``steps`` ahead of an arbitrary history window.

    Innovations inside the window are recovered by filtering from zero
    initial values.
    """
    p, d, q = model.order
    history = np.asarray(history, dtype=np.float64)
    if len(history) < p + d or (d and len(history) < d + 1):
        raise ValueError(f"history of {len(history)} values is too short for ARIMA{model.order}")
    z = difference(history, d)
    e = _filter_residuals(z, model.intercept, model.ar_weights, model.ma_weights, p) if q else np.zeros(0)
    path = _recurse(model, z, e, steps)
    return _integrate(path, history, d) if d else path


def arima_forecast_batch(model: ArimaModel, histories: np.ndarray, steps: int) -> np.ndarray:
    """Row-wise ``arima_forecast_from`` for a 2-D array of history windows.

    Returns an array of shape ``(rows, steps)``.
    """
    p, d, q = model.order
    H = np.asarray(histories, dtype=np.float64)
    if H.ndim != 2:
        raise ValueError("histories must be a 2-D array")
    if H.shape[1] < p + d or (d and H.shape[1] < d + 1):
        raise ValueError(f"history of {H.shape[1]} values is too short for ARIMA{model.order}")
    Z = np.diff(H, n=d, axis=1) if d else H
    n, width = Z.shape
    E = np.zeros((n, width))
    if q:
        for t in range(p, width):
            pred = np.full(n, model.intercept)
            for k in range(p):
                pred += model.ar_weights[k] * Z[:, t - 1 - k]
            for k in range(q):
                if t - 1 - k >= 0:
                    pred += model.ma_weights[k] * E[:, t - 1 - k]
            E[:, t] = Z[:, t] - pred
    zs = [Z[:, width - 1 - k] for k in range(p)]  # zs[k] = lag k+1
    es = [E[:, width - 1 - k] if width - 1 - k >= 0 else np.zeros(n) for k in range(q)]
    out = np.empty((n, steps))
    zero = np.zeros(n)
    for h in range(steps):
        pred = np.full(n, model.intercept)
        for k in range(p):
            pred += model.ar_weights[k] * zs[k]
        for k in range(q):
            pred += model.ma_weights[k] * es[k]
        out[:, h] = pred
        if p:
            zs = [pred] + zs[:-1]
        if q:
            es = [zero] + es[:-1]
    if d:
        for k in range(d - 1, -1, -1):
            level = np.diff(H, n=k, axis=1)[:, -1] if k else H[:, -1]
            out = level[:, None] + np.cumsum(out, axis=1)
    return out
