"""Uniform fit/predict wrappers around the four forecasting methods."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ..errors import SchemaError
from ..road_network import RoadNetwork
from ..series_store import IntensityMatrix, SampleGrid, WindowedDataset, day_segments, node_series, window
from .arima import ArimaModel, arima_fit, arima_forecast_batch
from .ha import HaModel, ha_fit, ha_predict_many
from .svr import DegenerateBandwidth, SvrModel, graph_features, svr_fit, svr_predict_many

log = logging.getLogger(__name__)

MODEL_NAMES = ("HA", "SVR", "SVR_GRAPH", "ARIMA")
MODEL_FORMAT = "congestion-lab-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class Hyperparameters:
    svr_c: float = 1.0
    svr_epsilon: float = 0.1
    svr_sigma: float | str = "auto"
    svr_tol: float = 1e-7
    svr_max_rows: int = 5000
    arima_order: tuple[int, int, int] = (1, 0, 0)
    fit_timeout_s: float = 600.0

    def as_dict(self) -> dict:
        return {
            "svr_c": self.svr_c,
            "svr_epsilon": self.svr_epsilon,
            "svr_sigma": self.svr_sigma,
            "svr_tol": self.svr_tol,
            "svr_max_rows": self.svr_max_rows,
            "arima_order": list(self.arima_order),
            "fit_timeout_s": self.fit_timeout_s,
        }


@dataclass
class TrainingData:
    """Training-day matrix already resampled to ``grid.interval``."""

    matrix: IntensityMatrix
    node: str
    grid: SampleGrid
    net: RoadNetwork | None = None

    @cached_property
    def windows(self) -> WindowedDataset:
        return window(self.matrix, self.node, self.grid, self.net is not None, self.net)


class Forecaster:
    """fit(TrainingData) -> self; predict(WindowedDataset) -> array of targets."""

    name = ""

    def __init__(self, hyper: Hyperparameters | None = None):
        self.hyper = hyper or Hyperparameters()
        self.model = None
        self.node: str | None = None
        self.grid: SampleGrid | None = None

    def fit(self, train: TrainingData) -> "Forecaster":
        self.node, self.grid = train.node, train.grid
        self.model = self._fit(train)
        return self

    def predict(self, test: WindowedDataset) -> np.ndarray:
        if self.model is None:
            raise RuntimeError(f"{self.name} model is not fitted")
        if len(test) == 0:
            return np.zeros(0)
        return self._predict(test)

    def _fit(self, train):
        raise NotImplementedError

    def _predict(self, test):
        raise NotImplementedError

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.name,
            "node": self.node,
            "grid": None if g is None else [g.interval, g.sequence_length, g.prediction_length],
            "params": self.model.to_dict(),
        }


class HistoricalAverage(Forecaster):
    name = "HA"

    def _fit(self, train):
        times, values = node_series(train.matrix, train.node)
        return ha_fit(times, values)

    def _predict(self, test):
        return ha_predict_many(self.model, test.target_times)


class SupportVectorRegression(Forecaster):
    name = "SVR"
    uses_graph = False

    def _fit(self, train):
        ds = train.windows
        X = graph_features(ds).features if self.uses_graph else ds.lag_features
        h = self.hyper
        try:
            return svr_fit(X, ds.targets, h.svr_c, h.svr_epsilon, h.svr_sigma, tol=h.svr_tol,
                           max_rows=h.svr_max_rows, time_budget=h.fit_timeout_s)
        except DegenerateBandwidth:
            if h.svr_sigma != "auto":
                raise
            # Identical feature rows make the kernel constant for any bandwidth.
            log.info("%s: training features are all identical, using sigma=1", train.node)
            return svr_fit(X, ds.targets, h.svr_c, h.svr_epsilon, 1.0, tol=h.svr_tol,
                           max_rows=h.svr_max_rows, time_budget=h.fit_timeout_s)

    def _predict(self, test):
        X = graph_features(test).features if self.uses_graph else test.lag_features
        return svr_predict_many(self.model, X)


class GraphSupportVectorRegression(SupportVectorRegression):
    name = "SVR_GRAPH"
    uses_graph = True


class Arima(Forecaster):
    name = "ARIMA"

    def _fit(self, train):
        segments = day_segments(train.matrix, train.node, train.grid.interval_s)
        return arima_fit(segments, self.hyper.arima_order)

    def _predict(self, test):
        return arima_forecast_batch(self.model, test.lag_features, test.horizon_steps)[:, -1]


_CLASSES = {cls.name: cls for cls in (HistoricalAverage, SupportVectorRegression,
                                      GraphSupportVectorRegression, Arima)}
_PARAMS = {"HA": HaModel, "SVR": SvrModel, "SVR_GRAPH": SvrModel, "ARIMA": ArimaModel}


def make_forecaster(name: str, hyper: Hyperparameters | None = None) -> Forecaster:
    try:
        return _CLASSES[name](hyper)
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}") from None


def save_model(forecaster: Forecaster, path: str | Path) -> None:
    Path(path).write_text(json.dumps(forecaster.to_dict(), indent=1) + "\n")


def load_model(path: str | Path) -> Forecaster:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a model file ({exc})") from None
    if data.get("format") != MODEL_FORMAT:
        raise SchemaError(f"{path}: not a {MODEL_FORMAT} file")
    if data.get("version") != MODEL_VERSION:
        raise SchemaError(f"{path}: unsupported model version {data.get('version')}")
    kind = data.get("kind")
    if kind not in _CLASSES:
        raise SchemaError(f"{path}: unknown model kind {kind!r}")
    forecaster = make_forecaster(kind)
    forecaster.node = data["node"]
    if data["grid"] is not None:
        forecaster.grid = SampleGrid(*data["grid"])
    forecaster.model = _PARAMS[kind].from_dict(data["params"])
    return forecaster
