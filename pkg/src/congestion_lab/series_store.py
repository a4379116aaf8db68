"""Intensity matrix assembly, resampling, calendar splits and supervised windows."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataInconsistencyError, SchemaError
from .frame_extraction import FrameObservation, intersection_intensity
from .road_network import RoadNetwork, neighbors

log = logging.getLogger(__name__)

DAY_START_S = 6 * 3600
DAY_END_S = 24 * 3600  # exclusive
DAY_SPAN_S = DAY_END_S - DAY_START_S
BASE_CADENCE_S = 30
# Bangladesh weekend: Friday and Saturday (datetime.weekday numbering).
WEEKEND_DAYS = frozenset({4, 5})


def minutes_to_seconds(minutes: float) -> int:
    seconds = float(minutes) * 60.0
    if seconds <= 0 or abs(seconds - round(seconds)) > 1e-9:
        raise ValueError(f"duration {minutes} min is not a positive whole number of seconds")
    return int(round(seconds))


def time_of_day(ts: np.ndarray) -> np.ndarray:
    ts = np.asarray(ts, dtype="datetime64[s]")
    return (ts - ts.astype("datetime64[D]")).astype(np.int64)


def is_weekend(day: dt.date) -> bool:
    return day.weekday() in WEEKEND_DAYS


@dataclass(frozen=True)
class IntensityMatrix:
    """Timestamps x intersections table; NaN marks a missing observation."""

    timestamps: np.ndarray
    columns: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        vals = np.asarray(self.values, dtype=np.float64).reshape(len(ts), len(self.columns))
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "values", vals)
        if len(ts) > 1 and not np.all(np.diff(ts) > np.timedelta64(0, "s")):
            raise DataInconsistencyError("matrix timestamps must be strictly increasing")
        if len(set(self.columns)) != len(self.columns):
            raise DataInconsistencyError("duplicate matrix columns")
        present = vals[~np.isnan(vals)]
        if present.size and present.min() < 0:
            raise DataInconsistencyError("intensities must be non-negative")
        tod = time_of_day(ts)
        if tod.size and (tod.min() < DAY_START_S or tod.max() >= DAY_END_S):
            raise DataInconsistencyError("timestamps must fall between 06:00:00 and 23:59:59")
        ts.flags.writeable = False
        vals.flags.writeable = False

    def __len__(self):
        return len(self.timestamps)

    def __eq__(self, other):
        if not isinstance(other, IntensityMatrix):
            return NotImplemented
        return (self.columns == other.columns
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.values, other.values, equal_nan=True))

    __hash__ = None

    def days(self) -> list[dt.date]:
        return sorted({d.item() for d in np.unique(self.timestamps.astype("datetime64[D]"))})

    def column(self, node: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(node)]
        except ValueError:
            raise KeyError(f"unknown intersection {node!r}") from None

    def select_days(self, days: Iterable[dt.date]) -> "IntensityMatrix":
        wanted = np.array(sorted(set(days)), dtype="datetime64[D]")
        keep = np.isin(self.timestamps.astype("datetime64[D]"), wanted)
        return IntensityMatrix(self.timestamps[keep], self.columns, self.values[keep])

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["timestamp", *self.columns])
            for ts, row in zip(self.timestamps, self.values):
                writer.writerow([str(ts), *(_fmt_value(v) for v in row)])

    @classmethod
    def load_csv(cls, path: str | Path) -> "IntensityMatrix":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "timestamp":
                raise SchemaError(f"{path}: first column must be 'timestamp'")
            columns = header[1:]
            stamps, rows = [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
                try:
                    stamps.append(np.datetime64(dt.datetime.fromisoformat(row[0]), "s"))
                    rows.append([float(v) if v != "" else np.nan for v in row[1:]])
                except ValueError as exc:
                    raise SchemaError(f"{path}:{lineno}: {exc}") from None
        values = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))
        return cls(np.array(stamps, dtype="datetime64[s]"), tuple(columns), values)


def _fmt_value(v: float) -> str:
    if math.isnan(v):
        return ""
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def empty_matrix(columns: Sequence[str]) -> IntensityMatrix:
    return IntensityMatrix(np.array([], dtype="datetime64[s]"), tuple(columns),
                           np.zeros((0, len(columns))))


def assemble_matrix(frames: Iterable[FrameObservation], net: RoadNetwork, *,
                    aggregation: str = "count", fill_gaps: bool = False) -> IntensityMatrix:
    """Turn frame observations into the intensity matrix, one row per frame.

    With ``fill_gaps`` every 30 s slot of each covered day gets a row and slots
    without a frame carry the missing marker. Frames captured outside the
    06:00-24:00 window are dropped with a warning.
    """
    columns = tuple(net.node_ids)
    ordered = sorted(frames, key=lambda f: f.timestamp)
    stamps: list[dt.datetime] = []
    rows: list[list[int]] = []
    for frame in ordered:
        tod = frame.timestamp.hour * 3600 + frame.timestamp.minute * 60 + frame.timestamp.second
        if not DAY_START_S <= tod < DAY_END_S:
            log.warning("dropping frame %s outside the daily capture window", frame.timestamp)
            continue
        if stamps and stamps[-1] == frame.timestamp:
            raise DataInconsistencyError(f"duplicate frame timestamp {frame.timestamp}")
        stamps.append(frame.timestamp)
        rows.append([intersection_intensity(frame, net, node, aggregation) for node in columns])
    if not stamps:
        return empty_matrix(columns)
    ts = np.array(stamps, dtype="datetime64[s]")
    values = np.array(rows, dtype=np.float64).reshape(len(stamps), len(columns))
    if not fill_gaps:
        return IntensityMatrix(ts, columns, values)
    days = np.unique(ts.astype("datetime64[D]"))
    offsets = np.arange(DAY_START_S, DAY_END_S, BASE_CADENCE_S).astype("timedelta64[s]")
    grid = (days.astype("datetime64[s]")[:, None] + offsets[None, :]).ravel()
    full = np.full((len(grid), len(columns)), np.nan)
    pos = np.searchsorted(grid, ts)
    on_grid = (pos < len(grid)) & (grid[np.minimum(pos, len(grid) - 1)] == ts)
    full[pos[on_grid]] = values[on_grid]
    off = ts[~on_grid]
    if off.size:
        # Off-cadence frames keep their own rows.
        grid = np.concatenate([grid, off])
        full = np.vstack([full, values[~on_grid]])
        order = np.argsort(grid, kind="stable")
        grid, full = grid[order], full[order]
    return IntensityMatrix(grid, columns, full)


def resample(m: IntensityMatrix, interval_min: float, agg: str = "decimate") -> IntensityMatrix:
    """Keep the rows whose offset from 06:00 is a multiple of the interval.

    ``agg="mean"`` instead averages each block of base-cadence rows that starts
    at a kept instant; a block with any missing or absent row is missing.
    """
    step = minutes_to_seconds(interval_min)
    if step % BASE_CADENCE_S:
        raise ValueError(f"interval {interval_min} min is not a multiple of the "
                         f"{BASE_CADENCE_S} s base cadence")
    if agg not in ("decimate", "mean"):
        raise ValueError(f"unknown resampling aggregation {agg!r}")
    tod = time_of_day(m.timestamps)
    keep = (tod - DAY_START_S) % step == 0
    if agg == "decimate" or step == BASE_CADENCE_S:
        return IntensityMatrix(m.timestamps[keep], m.columns, m.values[keep])
    per_block = step // BASE_CADENCE_S
    anchors = m.timestamps[keep]
    out = np.full((len(anchors), len(m.columns)), np.nan)
    for i, anchor in enumerate(anchors):
        lo = np.searchsorted(m.timestamps, anchor)
        hi = np.searchsorted(m.timestamps, anchor + np.timedelta64(step, "s"))
        block = m.values[lo:hi]
        on_cadence = (time_of_day(m.timestamps[lo:hi]) - DAY_START_S) % BASE_CADENCE_S == 0
        block = block[on_cadence]
        if len(block) == per_block:
            out[i] = block.mean(axis=0)  # NaN propagates
    return IntensityMatrix(anchors, m.columns, out)


@dataclass(frozen=True)
class SampleGrid:
    interval: float
    sequence_length: float
    prediction_length: float

    def __post_init__(self):
        for name in ("interval", "sequence_length", "prediction_length"):
            minutes_to_seconds(getattr(self, name))

    @property
    def interval_s(self) -> int:
        return minutes_to_seconds(self.interval)

    def is_consistent(self) -> bool:
        return (minutes_to_seconds(self.sequence_length) % self.interval_s == 0
                and minutes_to_seconds(self.prediction_length) % self.interval_s == 0)

    @property
    def lags(self) -> int:
        if not self.is_consistent():
            raise ValueError(f"interval {self.interval} min must divide sequence length "
                             f"{self.sequence_length} min and horizon {self.prediction_length} min")
        return minutes_to_seconds(self.sequence_length) // self.interval_s

    @property
    def horizon_steps(self) -> int:
        self.lags
        return minutes_to_seconds(self.prediction_length) // self.interval_s

    def key(self) -> str:
        return f"{self.interval:g}/{self.sequence_length:g}/{self.prediction_length:g}"


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Supervised windows for one intersection.

    ``features`` holds the lag vector (oldest first) and, when
    ``has_neighbor_sum``, one trailing column with the neighbours' summed
    intensity at the window end.
    """

    features: np.ndarray
    targets: np.ndarray
    target_times: np.ndarray
    target_node: str
    lags: int
    horizon_steps: int
    interval_s: int
    has_neighbor_sum: bool = False

    def __len__(self):
        return len(self.targets)

    @property
    def lag_features(self) -> np.ndarray:
        return self.features[:, :self.lags]

    @property
    def end_times(self) -> np.ndarray:
        return self.target_times - np.timedelta64(self.horizon_steps * self.interval_s, "s")


def day_slots(m: IntensityMatrix, interval_s: int) -> tuple[list[np.datetime64], np.ndarray]:
    """Dense (days, slots, columns) cube; slots absent from ``m`` are NaN."""
    if DAY_SPAN_S % interval_s:
        raise ValueError(f"interval {interval_s} s does not divide the daily window")
    n_slots = DAY_SPAN_S // interval_s
    days = np.unique(m.timestamps.astype("datetime64[D]"))
    cube = np.full((len(days), n_slots, len(m.columns)), np.nan)
    if len(m):
        tod = time_of_day(m.timestamps)
        on_grid = (tod - DAY_START_S) % interval_s == 0
        day_idx = np.searchsorted(days, m.timestamps.astype("datetime64[D]"))
        slot_idx = (tod - DAY_START_S) // interval_s
        cube[day_idx[on_grid], slot_idx[on_grid]] = m.values[on_grid]
    return list(days), cube


def window(m: IntensityMatrix, node: str, grid: SampleGrid, with_neighbor_sum: bool = False,
           net: RoadNetwork | None = None) -> WindowedDataset:
    """Slide a lag window over each day of ``m`` separately."""
    L, H, step = grid.lags, grid.horizon_steps, grid.interval_s
    if L < 1:
        raise ValueError("sequence length must cover at least one sample")
    if node not in m.columns:
        raise KeyError(f"unknown intersection {node!r}")
    col = m.columns.index(node)
    nbr_cols: list[int] = []
    if with_neighbor_sum:
        if net is None:
            raise ValueError("neighbour sums need the road network")
        nbr_cols = [m.columns.index(n) for n in neighbors(net, node)]
    days, cube = day_slots(m, step)
    n_slots = cube.shape[1]
    n_win = n_slots - L - H + 1
    width = L + (1 if with_neighbor_sum else 0)
    if n_win <= 0 or not days:
        return WindowedDataset(np.zeros((0, width)), np.zeros(0), np.array([], dtype="datetime64[s]"),
                               node, L, H, step, with_neighbor_sum)
    feats, targets, times = [], [], []
    ends = np.arange(L - 1, L - 1 + n_win)
    for day, plane in zip(days, cube):
        series = plane[:, col]
        lagged = np.lib.stride_tricks.sliding_window_view(series, L)[:n_win]
        tgt = series[ends + H]
        parts = [lagged]
        if with_neighbor_sum:
            nsum = plane[ends][:, nbr_cols].sum(axis=1) if nbr_cols else np.zeros(n_win)
            parts.append(nsum[:, None])
        block = np.hstack(parts)
        ok = ~np.isnan(block).any(axis=1) & ~np.isnan(tgt)
        feats.append(block[ok])
        targets.append(tgt[ok])
        offsets = (DAY_START_S + (ends[ok] + H) * step).astype("timedelta64[s]")
        times.append(day.astype("datetime64[s]") + offsets)
    return WindowedDataset(np.vstack(feats), np.concatenate(targets), np.concatenate(times),
                           node, L, H, step, with_neighbor_sum)


def node_series(m: IntensityMatrix, node: str) -> tuple[np.ndarray, np.ndarray]:
    """Present (timestamp, value) pairs of one column."""
    vals = m.column(node)
    ok = ~np.isnan(vals)
    return m.timestamps[ok], vals[ok]


def day_segments(m: IntensityMatrix, node: str, interval_s: int) -> list[np.ndarray]:
    """Contiguous runs of present values, split at day boundaries and gaps."""
    _, cube = day_slots(m, interval_s)
    col = m.columns.index(node)
    runs = []
    for plane in cube:
        series = plane[:, col]
        bad = np.isnan(series)
        if bad.all():
            continue
        edges = np.flatnonzero(np.diff(np.concatenate([[1], bad.astype(np.int8), [1]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            runs.append(series[start:stop])
    return runs


# ---------------------------------------------------------------- calendar splits

SPLIT_KINDS = (
    "first-k-train",
    "weekdays-only",
    "weekdays-train/weekends-test",
    "weekends-train/weekdays-test",
    "weekends-only",
)


@dataclass(frozen=True)
class SplitPolicy:
    kind: str
    k_train: int | None = None
    k_test: int | None = None

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise ValueError(f"unknown split policy {self.kind!r}; choose from {', '.join(SPLIT_KINDS)}")

    @classmethod
    def parse(cls, text: str) -> "SplitPolicy":
        """Parse ``kind[:k_train[,k_test]]``, e.g. ``weekdays-only:14``."""
        kind, _, args = text.strip().partition(":")
        nums = [int(a) for a in args.split(",") if a.strip()] if args else []
        if kind == "weekends-train/weekdays-test":
            # A single number is the test-day count.
            if len(nums) == 1:
                return cls(kind, None, nums[0])
        return cls(kind, *nums[:2])

    def describe(self) -> str:
        args = [str(v) for v in (self.k_train, self.k_test) if v is not None]
        if self.kind == "weekends-train/weekdays-test" and self.k_train is None and self.k_test is not None:
            args = [str(self.k_test)]
        return self.kind + (":" + ",".join(args) if args else "")


@dataclass(frozen=True)
class CalendarSplit:
    train_days: tuple[dt.date, ...]
    test_days: tuple[dt.date, ...]
    label: str = ""

    def __post_init__(self):
        if set(self.train_days) & set(self.test_days):
            raise ValueError("train and test days overlap")
        if not self.train_days or not self.test_days:
            raise ValueError("train and test day sets must both be non-empty")

    def save(self, path: str | Path) -> None:
        lines = [f"# split {self.label}".rstrip(), "[train]"]
        lines += [d.isoformat() for d in self.train_days]
        lines.append("[test]")
        lines += [d.isoformat() for d in self.test_days]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CalendarSplit":
        role, label = None, ""
        days: dict[str, list[dt.date]] = {"train": [], "test": []}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# split"):
                    label = line[len("# split"):].strip()
                continue
            if line in ("[train]", "[test]"):
                role = line[1:-1]
                continue
            if role is None:
                raise SchemaError(f"{path}:{lineno}: date before any [train]/[test] heading")
            try:
                days[role].append(dt.date.fromisoformat(line))
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: not an ISO date: {line!r}") from None
        return cls(tuple(days["train"]), tuple(days["test"]), label)


def _need(kind: str, have: int, want: int, what: str) -> None:
    if have < want:
        raise DataInconsistencyError(f"{kind}: needs {want} {what}, matrix has {have}")


def split_calendar(days: Sequence[dt.date], policy: SplitPolicy) -> CalendarSplit:
    days = sorted(set(days))
    weekdays = [d for d in days if not is_weekend(d)]
    weekends = [d for d in days if is_weekend(d)]
    kind = policy.kind
    if kind == "first-k-train":
        k = policy.k_train if policy.k_train is not None else 20
        _need(kind, len(days), k + 1, "days (k train + at least 1 test)")
        train, test = days[:k], days[k:]
        if policy.k_test is not None:
            _need(kind, len(test), policy.k_test, "test days")
            test = test[:policy.k_test]
    elif kind == "weekdays-only":
        k = policy.k_train if policy.k_train is not None else 14
        _need(kind, len(weekdays), k + 1, "weekdays")
        train, test = weekdays[:k], weekdays[k:]
        if policy.k_test is not None:
            _need(kind, len(test), policy.k_test, "test weekdays")
            test = test[:policy.k_test]
    elif kind == "weekdays-train/weekends-test":
        _need(kind, len(weekdays), 1, "weekdays")
        _need(kind, len(weekends), 1, "weekend days")
        train, test = weekdays, weekends
    elif kind == "weekends-train/weekdays-test":
        k_train = policy.k_train if policy.k_train is not None else 7
        k_test = policy.k_test if policy.k_test is not None else 3
        _need(kind, len(weekends), k_train, "weekend days")
        _need(kind, len(weekdays), k_test, "weekdays")
        train, test = weekends[:k_train], weekdays[len(weekdays) - k_test:]
    else:  # weekends-only
        k = policy.k_train if policy.k_train is not None else 7
        _need(kind, len(weekends), k + 1, "weekend days")
        train, test = weekends[:k], weekends[k:]
        if policy.k_test is not None:
            _need(kind, len(test), policy.k_test, "test weekend days")
            test = test[:policy.k_test]
    return CalendarSplit(tuple(train), tuple(test), policy.describe())


def split_days(m: IntensityMatrix, policy: SplitPolicy | str) -> CalendarSplit:
    if isinstance(policy, str):
        policy = SplitPolicy.parse(policy)
    return split_calendar(m.days(), policy)
