"""RMSE, MAE and Pearson correlation, per intersection and averaged over nodes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

AGGREGATE = "AGGREGATE"
REPORT_HEADER = ("node", "rmse", "mae", "corr", "n")


def _pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(truth, dtype=np.float64).ravel()
    p = np.asarray(pred, dtype=np.float64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} truth vs {p.size} predictions")
    return t, p


def rmse(truth, pred) -> float:
    t, p = _pair(truth, pred)
    if t.size == 0:
        raise ValueError("rmse of empty vectors")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(truth, pred) -> float:
    t, p = _pair(truth, pred)
    if t.size == 0:
        raise ValueError("mae of empty vectors")
    return float(np.mean(np.abs(t - p)))


def corr(truth, pred) -> float | None:
    """Pearson correlation, or ``None`` when either vector is constant."""
    t, p = _pair(truth, pred)
    if t.size < 2:
        raise ValueError("correlation needs at least two points")
    dt_ = t - t.mean()
    dp = p - p.mean()
    sxx = float(dt_ @ dt_)
    syy = float(dp @ dp)
    denom = math.sqrt(sxx) * math.sqrt(syy)
    if denom == 0.0:
        return None
    r = float(dt_ @ dp) / denom
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class NodeScore:
    rmse: float
    mae: float
    corr: float | None
    n: int


def score(truth, pred) -> NodeScore:
    t, p = _pair(truth, pred)
    return NodeScore(rmse(t, p), mae(t, p), corr(t, p) if t.size >= 2 else None, int(t.size))


@dataclass(frozen=True)
class EvaluationReport:
    per_node: Mapping[str, NodeScore]
    aggregate: NodeScore = field(default=None)

    def __post_init__(self):
        if self.aggregate is None:
            object.__setattr__(self, "aggregate", _mean_scores(self.per_node.values()))

    def without(self, nodes) -> "EvaluationReport":
        drop = set(nodes)
        return EvaluationReport({k: v for k, v in self.per_node.items() if k not in drop})

    def rows(self) -> list[tuple]:
        out = [(node, s.rmse, s.mae, s.corr, s.n) for node, s in sorted(self.per_node.items())]
        a = self.aggregate
        out.append((AGGREGATE, a.rmse, a.mae, a.corr, a.n))
        return out

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_HEADER)
            for node, r, m, c, n in self.rows():
                writer.writerow([node, fmt_float(r), fmt_float(m), fmt_float(c), n])


def fmt_float(v: float | None) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def _mean_scores(scores) -> NodeScore:
    scores = list(scores)
    if not scores:
        return NodeScore(float("nan"), float("nan"), None, 0)
    corrs = [s.corr for s in scores if s.corr is not None]
    return NodeScore(
        float(np.mean([s.rmse for s in scores])),
        float(np.mean([s.mae for s in scores])),
        float(np.mean(corrs)) if corrs else None,
        int(sum(s.n for s in scores)),
    )


def aggregate(per_node: Mapping[str, NodeScore]) -> EvaluationReport:
    """Unweighted node means; undefined correlations are left out of the corr mean."""
    if not per_node:
        raise ValueError("aggregate needs at least one node")
    return EvaluationReport(dict(per_node))


def evaluate(truth_by_node: Mapping[str, np.ndarray], pred_by_node: Mapping[str, np.ndarray]) -> EvaluationReport:
    per_node = {}
    for node in sorted(truth_by_node):
        t = truth_by_node[node]
        if len(t) == 0:
            continue
        per_node[node] = score(t, pred_by_node[node])
    return aggregate(per_node)
