"""Historical average baseline keyed by time of day and weekday."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..series_store import WindowedDataset, time_of_day


@dataclass
class HaModel:
    """Slot means with a weekday -> time-of-day -> global fallback chain.

    Keys of ``slot_means`` are ``(weekday, seconds_since_midnight)``;
    ``fallback_means`` is keyed by seconds since midnight alone.
    """

    slot_means: dict[tuple[int, int], float] = field(default_factory=dict)
    fallback_means: dict[int, float] = field(default_factory=dict)
    global_mean: float = 0.0

    def to_dict(self) -> dict:
        return {
            "slot_means": [[w, s, v] for (w, s), v in sorted(self.slot_means.items())],
            "fallback_means": [[s, v] for s, v in sorted(self.fallback_means.items())],
            "global_mean": self.global_mean,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HaModel":
        return cls({(int(w), int(s)): float(v) for w, s, v in data["slot_means"]},
                   {int(s): float(v) for s, v in data["fallback_means"]},
                   float(data["global_mean"]))


def _weekday(ts: np.ndarray) -> np.ndarray:
    # 1970-01-01 was a Thursday (weekday 3).
    days = np.asarray(ts, dtype="datetime64[s]").astype("datetime64[D]").astype(np.int64)
    return (days + 3) % 7


def ha_fit(times, values=None) -> HaModel:
    """Fit from ``(times, values)`` or from a dataset's targets and target times."""
    if isinstance(times, WindowedDataset):
        times, values = times.target_times, times.targets
    ts = np.asarray(times, dtype="datetime64[s]")
    vals = np.asarray(values, dtype=np.float64)
    ok = ~np.isnan(vals)
    ts, vals = ts[ok], vals[ok]
    if vals.size == 0:
        raise ValueError("historical average needs at least one training observation")
    tod = time_of_day(ts)
    wd = _weekday(ts)

    model = HaModel(global_mean=float(vals.mean()))
    slots, inv = np.unique(tod, return_inverse=True)
    sums = np.bincount(inv, weights=vals)
    counts = np.bincount(inv)
    model.fallback_means = {int(s): float(t / c) for s, t, c in zip(slots, sums, counts)}

    keys = wd * 86400 + tod
    uniq, inv = np.unique(keys, return_inverse=True)
    sums = np.bincount(inv, weights=vals)
    counts = np.bincount(inv)
    day_ids = ts.astype("datetime64[D]").astype(np.int64)
    n_days = _distinct_days(inv, day_ids, len(uniq))
    for key, total, count, nd in zip(uniq, sums, counts, n_days):
        if nd >= 2:
            model.slot_means[(int(key // 86400), int(key % 86400))] = float(total / count)
    return model


def _distinct_days(inv: np.ndarray, day_ids: np.ndarray, n_keys: int) -> np.ndarray:
    pairs = np.unique(inv.astype(np.int64) * (1 << 32) + (day_ids - day_ids.min()))
    return np.bincount(pairs >> 32, minlength=n_keys)


def ha_predict(model: HaModel, target_time) -> float:
    return float(ha_predict_many(model, np.array([target_time], dtype="datetime64[s]"))[0])


def ha_predict_many(model: HaModel, target_times) -> np.ndarray:
    ts = np.asarray(target_times, dtype="datetime64[s]")
    tod = time_of_day(ts)
    wd = _weekday(ts)
    out = np.empty(len(ts))
    for i, (w, s) in enumerate(zip(wd.tolist(), tod.tolist())):
        v = model.slot_means.get((w, s))
        if v is None:
            v = model.fallback_means.get(s, model.global_mean)
        out[i] = v
    return out
