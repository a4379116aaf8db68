"""Reduce traffic-layer screenshots to per-segment congestion-level histograms.

Levels: 1 free flow, 2 moderate, 3 near-heavy, 4 heavy, 0 no information
(background, labels, or colors outside every palette tolerance).
"""

from __future__ import annotations

import csv
import datetime as dt
import itertools
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

from .errors import ExtractionError, SchemaError
from .road_network import RGB, RoadNetwork, incoming_segments, pack_rgb, parse_hex, to_hex

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

N_LEVELS = 5
HEAVY_LEVELS = (3, 4)
FILENAME_FORMAT = "%Y%m%d_%H%M%S"
EXTRACTION_HEADER = ("timestamp", "segment_id", "c0", "c1", "c2", "c3", "c4")

_FILENAME_RE = re.compile(r"^(\d{8}_\d{6})\.png$", re.IGNORECASE)


@dataclass(frozen=True)
class TrafficPalette:
    """Colors of the four congestion levels plus a match radius in RGB space."""

    level_colors: Mapping[int, RGB]
    tolerance: float = 30.0

    def __post_init__(self):
        if sorted(self.level_colors) != [1, 2, 3, 4]:
            raise ValueError("palette needs exactly the levels 1, 2, 3, 4")
        colors = [tuple(int(v) for v in self.level_colors[k]) for k in (1, 2, 3, 4)]
        for c in colors:
            if len(c) != 3 or not all(0 <= v <= 255 for v in c):
                raise ValueError(f"invalid RGB triple {c}")
        if len(set(colors)) != 4:
            raise ValueError("palette colors must be pairwise distinct")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")
        if self.tolerance >= self.min_separation() / 2:
            raise ValueError(f"tolerance {self.tolerance} must be below half the minimum "
                             f"palette distance ({self.min_separation() / 2:.2f})")
        object.__setattr__(self, "level_colors", {k: colors[k - 1] for k in (1, 2, 3, 4)})

    def min_separation(self) -> float:
        colors = [np.array(self.level_colors[k], dtype=float) for k in (1, 2, 3, 4)]
        return min(float(np.linalg.norm(a - b)) for a, b in itertools.combinations(colors, 2))

    def as_array(self) -> np.ndarray:
        return np.array([self.level_colors[k] for k in (1, 2, 3, 4)], dtype=np.float64)

    def to_toml(self) -> str:
        lines = [f'level{k} = "{to_hex(self.level_colors[k])}"' for k in (1, 2, 3, 4)]
        lines.append(f"tolerance = {float(self.tolerance)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, data: Mapping) -> "TrafficPalette":
        try:
            colors = {k: parse_hex(str(data[f"level{k}"])) for k in (1, 2, 3, 4)}
        except KeyError as exc:
            raise ValueError(f"palette is missing {exc.args[0]}") from None
        return cls(colors, float(data.get("tolerance", 30.0)))

    @classmethod
    def load(cls, path: str | Path) -> "TrafficPalette":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_mapping(data.get("palette", data))


# Sampled from rendered traffic tiles; recalibrate against your own captures.
DEFAULT_PALETTE = TrafficPalette(
    {1: (0x63, 0xD6, 0x68), 2: (0xFF, 0x97, 0x4D), 3: (0xF2, 0x3C, 0x32), 4: (0x81, 0x1F, 0x1F)},
    tolerance=30.0,
)


def classify_pixels(rgb: np.ndarray, palette: TrafficPalette) -> np.ndarray:
    """Vectorized nearest-palette classification of an (..., 3) array."""
    pts = np.asarray(rgb, dtype=np.float64)
    diff = pts[..., None, :] - palette.as_array()
    dist = np.sqrt(np.einsum("...kc,...kc->...k", diff, diff))
    nearest = np.argmin(dist, axis=-1)
    best = np.take_along_axis(dist, nearest[..., None], axis=-1)[..., 0]
    return np.where(best <= palette.tolerance, nearest + 1, 0).astype(np.uint8)


def classify_pixel(rgb: RGB, palette: TrafficPalette) -> int:
    return int(classify_pixels(np.asarray(rgb)[None, :], palette)[0])


@dataclass(frozen=True)
class FrameObservation:
    timestamp: dt.datetime
    histograms: Mapping[str, tuple[int, int, int, int, int]]


class SegmentIndex:
    """Per-pixel segment labels of an annotation mask, reusable across frames."""

    def __init__(self, net: RoadNetwork, mask: np.ndarray):
        codes = pack_rgb(mask)
        self.shape = codes.shape
        self.segment_ids = [s.id for s in net.segments]
        flat = codes.ravel()
        lookup = {(c[0] << 16) | (c[1] << 8) | c[2]: i
                  for i, c in enumerate(s.annotation_color for s in net.segments)}
        labels = np.full(flat.shape, -1, dtype=np.int64)
        if lookup:
            keys = np.array(sorted(lookup), dtype=np.int64)
            vals = np.array([lookup[k] for k in keys], dtype=np.int64)
            pos = np.clip(np.searchsorted(keys, flat), 0, len(keys) - 1)
            hit = keys[pos] == flat
            labels[hit] = vals[pos[hit]]
        on_road = labels >= 0
        self.pixel_positions = np.flatnonzero(on_road)
        self.pixel_labels = labels[on_road]
        self.pixel_counts = np.bincount(self.pixel_labels, minlength=len(self.segment_ids))
        expected = np.array([s.pixel_count for s in net.segments], dtype=np.int64)
        if not np.array_equal(self.pixel_counts, expected):
            raise ExtractionError("mask does not match the network's pixel counts")


def parse_frame_timestamp(path: str | Path) -> dt.datetime:
    name = Path(path).name
    m = _FILENAME_RE.match(name)
    if not m:
        raise ExtractionError(f"{path}: filename must look like YYYYMMDD_HHMMSS.png")
    try:
        return dt.datetime.strptime(m.group(1), FILENAME_FORMAT)
    except ValueError:
        raise ExtractionError(f"{path}: invalid timestamp in filename") from None


def frame_filename(ts: dt.datetime) -> str:
    return ts.strftime(FILENAME_FORMAT) + ".png"


def load_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise ExtractionError(f"{path}: cannot read image ({exc})") from None


def extract_frame(image: np.ndarray | str | Path, net: RoadNetwork, mask: np.ndarray | SegmentIndex,
                  palette: TrafficPalette, timestamp: dt.datetime | None = None) -> FrameObservation:
    """Histogram the congestion levels under each segment's mask pixels.

    When ``image`` is a path the timestamp comes from its filename; arrays must
    be accompanied by an explicit ``timestamp``.
    """
    if isinstance(image, (str, Path)):
        ts = parse_frame_timestamp(image) if timestamp is None else timestamp
        pixels = load_image(image)
    else:
        if timestamp is None:
            raise ExtractionError("an in-memory frame needs an explicit timestamp")
        ts = timestamp
        pixels = np.asarray(image)
    index = mask if isinstance(mask, SegmentIndex) else SegmentIndex(net, mask)
    if pixels.shape[:2] != index.shape or pixels.ndim != 3:
        raise ExtractionError(f"frame {ts:%Y-%m-%d %H:%M:%S} has shape {pixels.shape[:2]}, "
                              f"mask has {index.shape}")
    road = pixels.reshape(-1, pixels.shape[-1])[index.pixel_positions, :3]
    levels = classify_pixels(road, palette)
    n_seg = len(index.segment_ids)
    counts = np.bincount(index.pixel_labels * N_LEVELS + levels,
                         minlength=n_seg * N_LEVELS).reshape(n_seg, N_LEVELS)
    hist = {sid: tuple(int(v) for v in counts[i]) for i, sid in enumerate(index.segment_ids)}
    return FrameObservation(ts, hist)


def intersection_intensity(frame: FrameObservation, net: RoadNetwork, node: str,
                           aggregation: str = "count") -> int:
    """Heavy-traffic measure of one intersection at one instant.

    ``count`` sums level-3 and level-4 pixels over incoming segments;
    ``value-sum`` weights them by their level instead.
    """
    if aggregation not in ("count", "value-sum"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    total = 0
    for seg in incoming_segments(net, node):
        try:
            hist = frame.histograms[seg.id]
        except KeyError:
            raise ExtractionError(f"frame {frame.timestamp} has no histogram for segment {seg.id}") from None
        if aggregation == "count":
            total += hist[3] + hist[4]
        else:
            total += 3 * hist[3] + 4 * hist[4]
    return total


def write_extraction_csv(frames: Iterable[FrameObservation], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EXTRACTION_HEADER)
        for frame in sorted(frames, key=lambda f: f.timestamp):
            stamp = frame.timestamp.isoformat(timespec="seconds")
            for sid in sorted(frame.histograms):
                writer.writerow([stamp, sid, *frame.histograms[sid]])


def read_extraction_csv(path: str | Path) -> list[FrameObservation]:
    by_time: dict[dt.datetime, dict[str, tuple]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header) != EXTRACTION_HEADER:
            missing = [c for c in EXTRACTION_HEADER if c not in header]
            raise SchemaError(f"{path}: bad extraction header, missing {missing or 'column order'}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(EXTRACTION_HEADER):
                raise SchemaError(f"{path}:{lineno}: expected {len(EXTRACTION_HEADER)} fields")
            try:
                ts = dt.datetime.fromisoformat(row[0])
                counts = tuple(int(v) for v in row[2:])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            by_time.setdefault(ts, {})[row[1]] = counts
    return [FrameObservation(ts, hist) for ts, hist in sorted(by_time.items())]
