"""Grid experiments over sampling interval, sequence length, horizon and model."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataInconsistencyError, NumericalError, SchemaError
from .evaluation import AGGREGATE, EvaluationReport, NodeScore, aggregate, fmt_float, score
from .forecasters import MODEL_NAMES, Hyperparameters, TrainingData, make_forecaster
from .road_network import RoadNetwork
from .series_store import (CalendarSplit, IntensityMatrix, SampleGrid, SplitPolicy, is_weekend, resample,
                           split_days, window)

log = logging.getLogger(__name__)

RESULTS_HEADER = ("interval_min", "seq_min", "pred_min", "model", "split", "node",
                  "rmse", "mae", "corr", "n", "duration_ms", "fingerprint")
DEFAULT_TOP_K = 8


@dataclass(frozen=True)
class GridSpec:
    intervals: tuple[float, ...] = (0.5, 1.0, 5.0)
    sequence_lengths: tuple[float, ...] = (15.0, 30.0, 45.0, 60.0)
    prediction_lengths: tuple[float, ...] = (5.0, 15.0, 30.0, 45.0, 60.0)
    models: tuple[str, ...] = MODEL_NAMES

    def __post_init__(self):
        for axis in (self.intervals, self.sequence_lengths, self.prediction_lengths):
            if not axis or any(v <= 0 for v in axis):
                raise ValueError("grid durations must be positive and non-empty")
        unknown = [m for m in self.models if m not in MODEL_NAMES]
        if unknown or not self.models:
            raise ValueError(f"unknown models {unknown}; choose from {', '.join(MODEL_NAMES)}")

    def combinations(self) -> list[SampleGrid]:
        return [SampleGrid(i, s, p) for i in self.intervals for s in self.sequence_lengths
                for p in self.prediction_lengths]

    def as_dict(self) -> dict:
        return {"intervals": list(self.intervals), "sequence_lengths": list(self.sequence_lengths),
                "prediction_lengths": list(self.prediction_lengths), "models": list(self.models)}


@dataclass
class RunResult:
    grid: SampleGrid
    model: str
    split: str
    report: EvaluationReport | None
    duration_ms: int
    fingerprint: str
    status: str = "ok"
    reason: str = ""
    predictions: dict = field(default_factory=dict, repr=False)

    @property
    def sort_key(self) -> tuple:
        return (self.grid.interval, self.grid.sequence_length, self.grid.prediction_length,
                _model_rank(self.model))


def _model_rank(name: str) -> int:
    return MODEL_NAMES.index(name) if name in MODEL_NAMES else len(MODEL_NAMES)


def config_fingerprint(grid: SampleGrid, model: str, split: CalendarSplit | str,
                       hyper: Hyperparameters, extra: dict | None = None) -> str:
    if isinstance(split, CalendarSplit):
        split_desc = {"label": split.label, "train": [d.isoformat() for d in split.train_days],
                      "test": [d.isoformat() for d in split.test_days]}
    else:
        split_desc = str(split)
    payload = {
        "grid": [grid.interval, grid.sequence_length, grid.prediction_length],
        "model": model,
        "split": split_desc,
        "hyper": hyper.as_dict(),
        "extra": extra or {},
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _check_split(m: IntensityMatrix, split: CalendarSplit) -> None:
    have = set(m.days())
    missing = sorted(d for d in (*split.train_days, *split.test_days) if d not in have)
    if missing:
        raise DataInconsistencyError("split days missing from matrix: "
                                     + ", ".join(d.isoformat() for d in missing))


def run_cell(m: IntensityMatrix, net: RoadNetwork | None, grid: SampleGrid, model: str,
             split: CalendarSplit, hyper: Hyperparameters, keep_predictions: bool = False) -> RunResult:
    """Fit and score one model at one grid point, one model per intersection."""
    fp = config_fingerprint(grid, model, split, hyper)
    label = split.label or "custom"
    if not grid.is_consistent():
        reason = (f"interval {grid.interval:g} min does not divide sequence {grid.sequence_length:g} "
                  f"min / horizon {grid.prediction_length:g} min")
        log.info("skipping %s %s: %s", grid.key(), model, reason)
        return RunResult(grid, model, label, None, 0, fp, "skipped", reason)
    start = time.perf_counter()
    train_m = resample(m.select_days(split.train_days), grid.interval)
    test_m = resample(m.select_days(split.test_days), grid.interval)
    per_node: dict[str, NodeScore] = {}
    preds = {}
    notes = []
    try:
        for node in m.columns:
            train = TrainingData(train_m, node, grid, net)
            test = window(test_m, node, grid, net is not None, net)
            if len(test) == 0 or len(train.windows) < 2:
                notes.append(f"{node}: not enough windows")
                continue
            forecaster = make_forecaster(model, hyper).fit(train)
            pred = forecaster.predict(test)
            per_node[node] = score(test.targets, pred)
            if keep_predictions:
                preds[node] = (test.target_times, test.targets, pred)
    except NumericalError as exc:
        elapsed = int(round((time.perf_counter() - start) * 1000))
        log.warning("cell %s %s failed: %s", grid.key(), model, exc)
        return RunResult(grid, model, label, None, elapsed, fp, "failed", str(exc))
    elapsed = int(round((time.perf_counter() - start) * 1000))
    if not per_node:
        return RunResult(grid, model, label, None, elapsed, fp, "failed",
                         "no intersection produced test windows")
    for note in notes:
        log.info("%s %s: %s", grid.key(), model, note)
    return RunResult(grid, model, label, aggregate(per_node), elapsed, fp, "ok",
                     "; ".join(notes), preds)


_WORKER_STATE: dict = {}


def _init_worker(m, net, split, hyper, keep_predictions):
    _WORKER_STATE.update(m=m, net=net, split=split, hyper=hyper, keep=keep_predictions)


def _run_job(job):
    grid, model = job
    s = _WORKER_STATE
    return run_cell(s["m"], s["net"], grid, model, s["split"], s["hyper"], s["keep"])


def run_grid(m: IntensityMatrix, net: RoadNetwork | None, grid: GridSpec, split: CalendarSplit,
             hyper: Hyperparameters | None = None, workers: int = 1,
             keep_predictions: bool = False) -> list[RunResult]:
    """Every (combination x model) cell, ordered by combination key then model."""
    hyper = hyper or Hyperparameters()
    _check_split(m, split)
    jobs = [(g, model) for g in grid.combinations() for model in grid.models]
    if workers <= 1 or len(jobs) == 1:
        results = [run_cell(m, net, g, model, split, hyper, keep_predictions) for g, model in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(m, net, split, hyper, keep_predictions)) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=1))
    return sorted(results, key=lambda r: r.sort_key)


# ------------------------------------------------------------------ results files

def result_rows(results: Iterable[RunResult], include_nodes: bool = True,
                record_timing: bool = False) -> list[list[str]]:
    rows = []
    for r in sorted(results, key=lambda r: r.sort_key):
        head = [f"{r.grid.interval:g}", f"{r.grid.sequence_length:g}", f"{r.grid.prediction_length:g}",
                r.model, r.split]
        duration = str(r.duration_ms) if record_timing else ""
        if r.report is not None and include_nodes:
            for node, s in sorted(r.report.per_node.items()):
                rows.append(head + [node, fmt_float(s.rmse), fmt_float(s.mae), fmt_float(s.corr),
                                    str(s.n), "", r.fingerprint])
        if r.report is not None:
            a = r.report.aggregate
            rows.append(head + [AGGREGATE, fmt_float(a.rmse), fmt_float(a.mae), fmt_float(a.corr),
                                str(a.n), duration, r.fingerprint])
        else:
            rows.append(head + [AGGREGATE, "", "", "", "0", duration, r.fingerprint])
    return rows


def write_results_csv(results: Iterable[RunResult], path: str | Path, include_nodes: bool = True,
                      record_timing: bool = False) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        writer.writerows(result_rows(results, include_nodes, record_timing))
    tmp.replace(path)


@dataclass(frozen=True)
class ResultRow:
    interval_min: float
    seq_min: float
    pred_min: float
    model: str
    split: str
    node: str
    rmse: float | None
    mae: float | None
    corr: float | None
    n: int
    duration_ms: int | None
    fingerprint: str

    @property
    def combo(self) -> tuple[float, float, float]:
        return (self.interval_min, self.seq_min, self.pred_min)


def _opt_float(text: str) -> float | None:
    return float(text) if text != "" else None


def read_results_csv(path: str | Path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        for col in RESULTS_HEADER:
            if col not in header:
                raise SchemaError(f"{path}: results file lacks column {col!r}")
        idx = {c: header.index(c) for c in RESULTS_HEADER}
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields")
            get = lambda c: raw[idx[c]]
            try:
                rows.append(ResultRow(float(get("interval_min")), float(get("seq_min")),
                                      float(get("pred_min")), get("model"), get("split"), get("node"),
                                      _opt_float(get("rmse")), _opt_float(get("mae")),
                                      _opt_float(get("corr")), int(get("n") or 0),
                                      int(get("duration_ms")) if get("duration_ms") else None,
                                      get("fingerprint")))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
        return rows


# ------------------------------------------------------------------ ranking and outliers

@dataclass(frozen=True)
class RankedCombination:
    interval: float
    sequence_length: float
    prediction_length: float
    avg_rmse: float
    avg_mae: float
    models: tuple[str, ...]

    @property
    def key(self) -> tuple[float, float, float]:
        return (self.interval, self.sequence_length, self.prediction_length)


def rank_combinations(results: Sequence[RunResult] | Sequence[ResultRow],
                      top_k: int | None = None) -> list[RankedCombination]:
    """Sort combinations by model-averaged RMSE, then MAE, then the combination key.

    Only cells that produced an aggregate take part; combinations with none are
    listed last.
    """
    if not results:
        raise ValueError("nothing to rank")
    per_combo: dict[tuple, list[tuple[str, float, float]]] = {}
    for r in results:
        if isinstance(r, RunResult):
            key = (r.grid.interval, r.grid.sequence_length, r.grid.prediction_length)
            metrics = (r.report.aggregate.rmse, r.report.aggregate.mae) if r.report else None
        else:
            if r.node != AGGREGATE:
                continue
            key = r.combo
            metrics = (r.rmse, r.mae) if r.rmse is not None and r.mae is not None else None
        bucket = per_combo.setdefault(key, [])
        if metrics is not None:
            bucket.append((r.model, *metrics))
    ranked = []
    for key, cells in per_combo.items():
        if cells:
            avg_r = float(np.mean([c[1] for c in cells]))
            avg_m = float(np.mean([c[2] for c in cells]))
        else:
            avg_r = avg_m = math.inf
        ranked.append(RankedCombination(*key, avg_r, avg_m, tuple(sorted({c[0] for c in cells}, key=_model_rank))))
    ranked.sort(key=lambda c: (c.avg_rmse, c.avg_mae, c.key))
    return ranked[:top_k] if top_k is not None else ranked


@dataclass(frozen=True)
class OutlierReport:
    before: NodeScore
    after: NodeScore
    excluded: dict[str, NodeScore]


def outlier_report(result: RunResult | EvaluationReport, exclude: Sequence[str]) -> OutlierReport:
    report = result.report if isinstance(result, RunResult) else result
    if report is None:
        raise ValueError("run has no evaluation report")
    unknown = [n for n in exclude if n not in report.per_node]
    if unknown:
        raise KeyError(f"nodes not in report: {', '.join(unknown)}")
    remaining = report.without(exclude)
    after = remaining.aggregate if remaining.per_node else NodeScore(float("nan"), float("nan"), None, 0)
    return OutlierReport(report.aggregate, after, {n: report.per_node[n] for n in exclude})


def worst_nodes(report: EvaluationReport, k: int) -> list[str]:
    ordered = sorted(report.per_node.items(), key=lambda kv: (-kv[1].rmse, kv[0]))
    return [node for node, _ in ordered[:k]]


# ------------------------------------------------------------------ weekday/weekend suite

SUITE_POLICIES = (
    SplitPolicy("weekdays-only", 14),
    SplitPolicy("weekdays-train/weekends-test"),
    SplitPolicy("weekends-train/weekdays-test", 7, 3),
    SplitPolicy("weekends-only", 7),
)


def suite_splits(m: IntensityMatrix) -> list[CalendarSplit]:
    splits = []
    for policy in SUITE_POLICIES:
        s = split_days(m, policy)
        tr = "weekend" if all(is_weekend(d) for d in s.train_days) else "weekday"
        te = "weekend" if all(is_weekend(d) for d in s.test_days) else "weekday"
        label = f"{tr}{len(s.train_days)}/{te}{len(s.test_days)}"
        splits.append(CalendarSplit(s.train_days, s.test_days, label))
    return splits


def weekday_weekend_suite(m: IntensityMatrix, net: RoadNetwork | None, combo: SampleGrid,
                          models: Sequence[str] = MODEL_NAMES, hyper: Hyperparameters | None = None,
                          workers: int = 1) -> dict[str, list[RunResult]]:
    """The four train/test regimes at one grid point, keyed by split label."""
    hyper = hyper or Hyperparameters()
    spec = GridSpec((combo.interval,), (combo.sequence_length,), (combo.prediction_length,), tuple(models))
    return {s.label: run_grid(m, net, spec, s, hyper, workers) for s in suite_splits(m)}


# ------------------------------------------------------------------ manifest

def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path: str | Path, *, grid: GridSpec, hyper: Hyperparameters, split: CalendarSplit,
                   inputs: dict[str, str | Path], seed: int | None = None, extra: dict | None = None) -> None:
    lines = ["# congestion-lab run manifest"]
    lines.append("grid = " + json.dumps(grid.as_dict(), sort_keys=True))
    lines.append("hyperparameters = " + json.dumps(hyper.as_dict(), sort_keys=True))
    lines.append(f"split = {split.label or 'custom'}")
    lines.append("train_days = " + ",".join(d.isoformat() for d in split.train_days))
    lines.append("test_days = " + ",".join(d.isoformat() for d in split.test_days))
    lines.append(f"seed = {seed if seed is not None else ''}")
    for name, p in sorted(inputs.items()):
        lines.append(f"input.{name} = {Path(p).name} sha256:{file_sha256(p)}")
    for key, value in sorted((extra or {}).items()):
        lines.append(f"{key} = {json.dumps(value, sort_keys=True)}")
    Path(path).write_text("\n".join(lines) + "\n")
