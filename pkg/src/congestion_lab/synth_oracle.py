"""Seeded synthetic congestion scenes, ground-truth intensities and rendered frames.

A scene is a road network whose segments are axis-aligned rectangles on a
small canvas. Each segment carries a latent congestion value

    base + amplitude[regime] * diurnal(time of day) + offset[segment]
         + noise_sd * noise_scale[regime] * ar1[segment](t)

that is thresholded at 1.5 / 2.5 / 3.5 into the levels 1..4. ``ar1`` has unit
marginal variance. Regimes are weekday and weekend (Friday, Saturday).
"""

from __future__ import annotations

import datetime as dt
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image
from scipy.signal import lfilter

from .frame_extraction import DEFAULT_PALETTE, TrafficPalette, frame_filename
from .road_network import RoadNetwork, RoadSegment, incoming_segments, parse_hex, to_hex, write_registry
from .series_store import BASE_CADENCE_S, DAY_SPAN_S, DAY_START_S, IntensityMatrix, WEEKEND_DAYS

LEVEL_THRESHOLDS = (1.5, 2.5, 3.5)
BACKGROUND = (255, 255, 255)
MASK_BACKGROUND = (0, 0, 0)


@dataclass(frozen=True)
class ProfileSpec:
    """Diurnal shape and noise settings of a congestion process.

    ``peaks`` are ``(centre_hour, width_hours, height)`` Gaussian bumps.
    """

    base: float = 1.6
    peaks: tuple[tuple[float, float, float], ...] = ((9.0, 1.5, 1.8), (18.5, 2.0, 2.2))
    weekday_amplitude: float = 1.0
    weekend_amplitude: float = 0.6
    noise_sd: float = 0.5
    weekday_noise: float = 1.0
    weekend_noise: float = 1.0
    phi: float = 0.95
    offset_sd: float = 0.3
    pinned_levels: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not -1.0 < self.phi < 1.0:
            raise ValueError("AR(1) coefficient must satisfy |phi| < 1")
        for seg, level in self.pinned_levels.items():
            if level not in (1, 2, 3, 4):
                raise ValueError(f"pinned level for {seg} must be 1..4")
        object.__setattr__(self, "peaks", tuple(tuple(float(v) for v in p) for p in self.peaks))

    def diurnal(self, seconds_of_day: np.ndarray) -> np.ndarray:
        hours = np.asarray(seconds_of_day, dtype=np.float64) / 3600.0
        shape = np.zeros_like(hours)
        for centre, width, height in self.peaks:
            shape += height * np.exp(-0.5 * ((hours - centre) / width) ** 2)
        return shape

    def to_dict(self) -> dict:
        data = asdict(self)
        data["peaks"] = [list(p) for p in self.peaks]
        data["pinned_levels"] = dict(sorted(self.pinned_levels.items()))
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "ProfileSpec":
        data = dict(data)
        data["peaks"] = tuple(tuple(p) for p in data.get("peaks", ()))
        return cls(**data)


Rect = tuple[int, int, int, int]  # x0, y0, x1, y1 with exclusive upper bounds


@dataclass(frozen=True)
class SyntheticScene:
    net: RoadNetwork
    rects: Mapping[str, tuple[Rect, ...]]
    palette: TrafficPalette = DEFAULT_PALETTE
    width: int = 48
    height: int = 48
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    seed: int = 0

    def label_image(self) -> np.ndarray:
        """Segment index per pixel (position in ``net.segments``), -1 off-road."""
        labels = np.full((self.height, self.width), -1, dtype=np.int64)
        for i, seg in enumerate(self.net.segments):
            for x0, y0, x1, y1 in self.rects[seg.id]:
                labels[y0:y1, x0:x1] = i
        return labels

    def mask(self) -> np.ndarray:
        labels = self.label_image()
        img = np.empty((self.height, self.width, 3), dtype=np.uint8)
        img[:] = MASK_BACKGROUND
        for i, seg in enumerate(self.net.segments):
            img[labels == i] = seg.annotation_color
        return img

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "palette": {**{f"level{k}": to_hex(self.palette.level_colors[k]) for k in (1, 2, 3, 4)},
                        "tolerance": self.palette.tolerance},
            "profile": self.profile.to_dict(),
            "segments": [
                {"id": s.id, "color": to_hex(s.annotation_color), "from": s.from_id, "to": s.to_id,
                 "rects": [list(r) for r in self.rects[s.id]]}
                for s in self.net.segments
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticScene":
        data = json.loads(Path(path).read_text())
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticScene":
        rects = {s["id"]: tuple(tuple(int(v) for v in r) for r in s["rects"]) for s in data["segments"]}
        counts = {sid: _rect_area(rs) for sid, rs in rects.items()}
        segments = tuple(RoadSegment(s["id"], parse_hex(s["color"]), s["from"], s["to"], counts[s["id"]])
                         for s in data["segments"])
        nodes = frozenset(n for s in segments for n in (s.from_id, s.to_id))
        return cls(RoadNetwork(nodes, segments), rects, TrafficPalette.from_mapping(data["palette"]),
                   int(data["width"]), int(data["height"]), ProfileSpec.from_dict(data["profile"]),
                   int(data["seed"]))

    def write_inputs(self, directory: str | Path) -> dict[str, Path]:
        """Write registry CSV, mask PNG, palette TOML and scene JSON."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"registry": out / "registry.csv", "mask": out / "mask.png",
                 "palette": out / "palette.toml", "scene": out / "scene.json"}
        write_registry(self.net, paths["registry"])
        Image.fromarray(self.mask(), "RGB").save(paths["mask"])
        paths["palette"].write_text(self.palette.to_toml())
        self.save(paths["scene"])
        return paths


def _rect_area(rects: Sequence[Rect]) -> int:
    covered = set()
    for x0, y0, x1, y1 in rects:
        covered.update((x, y) for x in range(x0, x1) for y in range(y0, y1))
    return len(covered)


def make_scene(n_intersections: int = 5, *, seed: int = 0, profile: ProfileSpec | None = None,
               palette: TrafficPalette = DEFAULT_PALETTE, chords: bool = False) -> SyntheticScene:
    """Bidirectional ring of intersections, one horizontal bar per segment.

    ``chords`` adds a one-way spoke from every other intersection to node 0.
    """
    if n_intersections < 2:
        raise ValueError("need at least two intersections")
    ids = [f"N{i:02d}" for i in range(n_intersections)]
    pairs = []
    for i in range(n_intersections):
        j = (i + 1) % n_intersections
        if n_intersections == 2 and i == 1:
            break
        pairs += [(ids[i], ids[j]), (ids[j], ids[i])]
    if chords:
        pairs += [(ids[i], ids[0]) for i in range(2, n_intersections, 2)]
    width = 48
    rects: dict[str, tuple[Rect, ...]] = {}
    segments = []
    for k, (a, b) in enumerate(pairs):
        sid = f"S{k:03d}"
        y = 1 + 3 * k
        length = 10 + (7 * k) % 29
        rects[sid] = ((2, y, 2 + length, y + 2),)
        color = (0x10 + (k * 37) % 200, 0x20 + (k * 91) % 200, 0x30 + k % 200)
        segments.append(RoadSegment(sid, color, a, b, 2 * length))
    height = 3 * len(pairs) + 2
    net = RoadNetwork(frozenset(ids), tuple(segments))
    return SyntheticScene(net, rects, palette, width, height, profile or ProfileSpec(), seed)


@dataclass(frozen=True)
class SimulationResult:
    timestamps: np.ndarray          # datetime64[s], every frame instant
    segment_ids: tuple[str, ...]
    levels: np.ndarray              # (instants, segments) uint8 in 1..4
    matrix: IntensityMatrix         # ground-truth intensities

    def levels_at(self, i: int) -> dict[str, int]:
        return {sid: int(v) for sid, v in zip(self.segment_ids, self.levels[i])}


def frame_instants(days: int, base_interval_s: int = BASE_CADENCE_S,
                   start: dt.date = dt.date(2019, 11, 1)) -> np.ndarray:
    if days < 1:
        raise ValueError("days must be >= 1")
    if base_interval_s <= 0 or DAY_SPAN_S % base_interval_s:
        raise ValueError("base interval must divide the 18 h daily window")
    day0 = np.datetime64(start, "D")
    dates = day0 + np.arange(days).astype("timedelta64[D]")
    offs = np.arange(DAY_START_S, DAY_START_S + DAY_SPAN_S, base_interval_s).astype("timedelta64[s]")
    return (dates.astype("datetime64[s]")[:, None] + offs[None, :]).ravel()


def intensity_from_levels(net: RoadNetwork, levels: np.ndarray, heavy=(3, 4)) -> np.ndarray:
    """Per-node counts of heavy pixels on incoming segments, for every instant."""
    order = {s.id: i for i, s in enumerate(net.segments)}
    heavy_mask = np.isin(levels, heavy)
    out = np.zeros((levels.shape[0], len(net.node_ids)))
    for j, node in enumerate(net.node_ids):
        for seg in incoming_segments(net, node):
            out[:, j] += heavy_mask[:, order[seg.id]] * seg.pixel_count
    return out


def _ar1_paths(n_steps: int, n_paths: int, phi: float, seeds: Sequence[np.random.SeedSequence]) -> np.ndarray:
    """Unit-variance stationary AR(1) paths, one column per seed."""
    out = np.empty((n_steps, n_paths))
    innov_sd = np.sqrt(1.0 - phi * phi)
    for k, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        shocks = rng.standard_normal(n_steps)
        shocks[0] /= innov_sd if innov_sd > 0 else 1.0
        out[:, k] = lfilter([innov_sd], [1.0, -phi], shocks)
    return out


def simulate_process(scene: SyntheticScene, days: int, base_interval_s: int = BASE_CADENCE_S,
                     seed: int | None = None, start: dt.date = dt.date(2019, 11, 1)) -> SimulationResult:
    """Draw segment levels for every frame instant and the implied intensities."""
    seed = scene.seed if seed is None else seed
    prof = scene.profile
    ts = frame_instants(days, base_interval_s, start)
    segs = scene.net.segments
    root = np.random.SeedSequence(seed)
    offset_ss, *noise_ss = root.spawn(1 + len(segs))
    offsets = np.random.default_rng(offset_ss).normal(0.0, prof.offset_sd, len(segs)) \
        if prof.offset_sd > 0 else np.zeros(len(segs))

    tod = (ts - ts.astype("datetime64[D]")).astype(np.int64)
    weekday = (ts.astype("datetime64[D]").astype(np.int64) + 3) % 7
    weekend = np.isin(weekday, list(WEEKEND_DAYS))
    amplitude = np.where(weekend, prof.weekend_amplitude, prof.weekday_amplitude)
    noise_scale = np.where(weekend, prof.weekend_noise, prof.weekday_noise) * prof.noise_sd
    mean = prof.base + amplitude * prof.diurnal(tod)
    latent = mean[:, None] + offsets[None, :]
    if prof.noise_sd > 0:
        latent = latent + noise_scale[:, None] * _ar1_paths(len(ts), len(segs), prof.phi, noise_ss)
    levels = (1 + np.digitize(latent, LEVEL_THRESHOLDS)).astype(np.uint8)
    for k, seg in enumerate(segs):
        if seg.id in prof.pinned_levels:
            levels[:, k] = prof.pinned_levels[seg.id]
    values = intensity_from_levels(scene.net, levels)
    matrix = IntensityMatrix(ts, tuple(scene.net.node_ids), values)
    return SimulationResult(ts, tuple(s.id for s in segs), levels, matrix)


def render_frame(scene: SyntheticScene, levels: np.ndarray, labels: np.ndarray | None = None) -> np.ndarray:
    """Paint one frame: every segment pixel in its level's palette color, white elsewhere."""
    if labels is None:
        labels = scene.label_image()
    lut = np.array([BACKGROUND] + [scene.palette.level_colors[k] for k in (1, 2, 3, 4)], dtype=np.uint8)
    codes = np.zeros(labels.shape, dtype=np.int64)
    on = labels >= 0
    codes[on] = np.asarray(levels, dtype=np.int64)[labels[on]]
    return lut[codes]


def _write_frames(args):
    scene_dict, level_rows, stamps, out_dir = args
    scene = SyntheticScene.from_dict(scene_dict)
    labels = scene.label_image()
    paths = []
    for levels, stamp in zip(level_rows, stamps):
        path = Path(out_dir) / frame_filename(stamp)
        try:
            Image.fromarray(render_frame(scene, levels, labels), "RGB").save(path)
        except OSError as exc:
            raise OSError(f"{path}: {exc}") from exc
        paths.append(path)
    return paths


def render_frames(scene: SyntheticScene, sim: SimulationResult, out_dir: str | Path,
                  workers: int = 1) -> list[Path]:
    """Write one lossless PNG per instant, named ``YYYYMMDD_HHMMSS.png``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if sim.levels.shape[1] != len(scene.net.segments):
        raise ValueError("level assignments do not cover every segment")
    stamps = [t.item() for t in sim.timestamps]
    chunk = max(1, len(stamps) // max(1, workers * 4))
    jobs = [(scene.to_dict(), sim.levels[i:i + chunk], stamps[i:i + chunk], str(out))
            for i in range(0, len(stamps), chunk)]
    if workers <= 1:
        results = [_write_frames(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_write_frames, jobs))
    return [p for batch in results for p in batch]


def simulate_series(profile, phi: float, variance: float, days: int = 1, seed: int = 0) -> np.ndarray:
    """Profile repeated ``days`` times plus AR(1) noise with innovation ``variance``.

    ``profile`` is a 1-D array of one day's values (or a scalar for a flat
    single-sample day). The noise starts from its stationary distribution.
    """
    if not -1.0 < phi < 1.0:
        raise ValueError("AR(1) coefficient must satisfy |phi| < 1")
    if variance < 0:
        raise ValueError("variance must be non-negative")
    base = np.tile(np.atleast_1d(np.asarray(profile, dtype=np.float64)), days)
    if variance == 0:
        return base
    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal(len(base)) * np.sqrt(variance)
    shocks[0] /= np.sqrt(1.0 - phi * phi)
    return base + lfilter([1.0], [1.0, -phi], shocks)
