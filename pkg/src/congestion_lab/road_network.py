"""Annotated road graph: segments keyed by mask color, joined at intersections."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .errors import NetworkError

REGISTRY_HEADER = ("segment_id", "color_hex", "from_id", "to_id")

_ID_RE = re.compile(r"^[A-Za-z0-9_.:\-]+$")
_HEX_RE = re.compile(r"^#[0-9A-Fa-f]{6}$")

RGB = tuple[int, int, int]


def parse_hex(text: str) -> RGB:
    text = text.strip()
    if not _HEX_RE.match(text):
        raise ValueError(f"not a #RRGGBB color: {text!r}")
    return (int(text[1:3], 16), int(text[3:5], 16), int(text[5:7], 16))


def to_hex(rgb: RGB) -> str:
    return "#{:02X}{:02X}{:02X}".format(*rgb)


def is_valid_id(value: str) -> bool:
    return bool(value) and bool(_ID_RE.match(value))


@dataclass(frozen=True)
class RoadSegment:
    id: str
    annotation_color: RGB
    from_id: str
    to_id: str
    pixel_count: int = 0


@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    subjects: tuple[str, ...]
    detail: str = ""


@dataclass(frozen=True)
class RoadNetwork:
    """Immutable directed road graph.

    ``segments`` is kept sorted by id. Adjacency is derived on construction and
    ignores direction, so ``neighbors`` is symmetric.
    """

    intersections: frozenset[str]
    segments: tuple[RoadSegment, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)
    _incoming: dict = field(init=False, repr=False, compare=False)
    _adjacency: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(sorted(self.segments, key=lambda s: s.id))
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "intersections", frozenset(self.intersections))
        incoming: dict[str, list[RoadSegment]] = {n: [] for n in self.intersections}
        adjacency: dict[str, set[str]] = {n: set() for n in self.intersections}
        for seg in segs:
            incoming.setdefault(seg.to_id, []).append(seg)
            if seg.from_id != seg.to_id:
                adjacency.setdefault(seg.from_id, set()).add(seg.to_id)
                adjacency.setdefault(seg.to_id, set()).add(seg.from_id)
        object.__setattr__(self, "_by_id", {s.id: s for s in segs})
        object.__setattr__(self, "_incoming", incoming)
        object.__setattr__(self, "_adjacency", adjacency)

    @property
    def node_ids(self) -> list[str]:
        return sorted(self.intersections)

    def segment(self, segment_id: str) -> RoadSegment:
        try:
            return self._by_id[segment_id]
        except KeyError:
            raise KeyError(f"unknown segment {segment_id!r}") from None

    def _require(self, node: str) -> None:
        if node not in self.intersections:
            raise KeyError(f"unknown intersection {node!r}")


def incoming_segments(net: RoadNetwork, node: str) -> list[RoadSegment]:
    net._require(node)
    return list(net._incoming.get(node, ()))


def outgoing_segments(net: RoadNetwork, node: str) -> list[RoadSegment]:
    net._require(node)
    return [s for s in net.segments if s.from_id == node]


def neighbors(net: RoadNetwork, node: str) -> list[str]:
    net._require(node)
    return sorted(net._adjacency.get(node, ()))


def validate(net: RoadNetwork) -> list[ValidationIssue]:
    """Report broken invariants; an empty list means the network is sound."""
    issues: list[ValidationIssue] = []
    for seg in net.segments:
        for end in (seg.from_id, seg.to_id):
            if end not in net.intersections:
                issues.append(ValidationIssue("dangling endpoint", (seg.id, end),
                                              f"segment {seg.id} references {end}"))
        if seg.from_id == seg.to_id:
            issues.append(ValidationIssue("self loop", (seg.id,)))
        if seg.pixel_count <= 0:
            issues.append(ValidationIssue("zero-pixel segment", (seg.id,)))
    by_color: dict[RGB, list[str]] = {}
    for seg in net.segments:
        by_color.setdefault(tuple(seg.annotation_color), []).append(seg.id)
    for color, ids in sorted(by_color.items()):
        if len(ids) > 1:
            issues.append(ValidationIssue("color collision", tuple(sorted(ids)), to_hex(color)))
    return issues


def read_registry(path: str | Path) -> list[tuple[str, str, str, str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != REGISTRY_HEADER:
            raise NetworkError(f"{path}: registry header must be {','.join(REGISTRY_HEADER)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise NetworkError(f"{path}:{lineno}: expected 4 fields, got {row}")
            rows.append(tuple(c.strip() for c in row))
        return rows


def write_registry(net: RoadNetwork, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REGISTRY_HEADER)
        for seg in net.segments:
            writer.writerow([seg.id, to_hex(seg.annotation_color), seg.from_id, seg.to_id])


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def pack_rgb(image: np.ndarray) -> np.ndarray:
    """Collapse an (H, W, 3) uint8 image into (H, W) int32 color codes."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an RGB image of shape (H, W, 3), got {img.shape}")
    img = img.astype(np.int32)
    return (img[..., 0] << 16) | (img[..., 1] << 8) | img[..., 2]


def _code(rgb: RGB) -> int:
    return (rgb[0] << 16) | (rgb[1] << 8) | rgb[2]


def load_network(registry: Iterable[tuple[str, str, str, str]] | str | Path,
                 mask: np.ndarray | str | Path) -> RoadNetwork:
    """Bind registry rows to mask pixels by exact color match.

    ``registry`` may be a CSV path or an iterable of
    ``(segment_id, color_hex, from_id, to_id)`` rows; ``mask`` a PNG path or an
    RGB array.
    """
    rows = read_registry(registry) if isinstance(registry, (str, Path)) else list(registry)
    mask_arr = load_mask(mask) if isinstance(mask, (str, Path)) else np.asarray(mask)

    seen_ids: dict[str, tuple] = {}
    seen_colors: dict[RGB, tuple] = {}
    parsed = []
    for row in rows:
        if len(row) != 4:
            raise NetworkError(f"registry row must have 4 fields: {row}")
        seg_id, color_hex, from_id, to_id = (str(c).strip() for c in row)
        if not is_valid_id(seg_id):
            raise NetworkError(f"malformed segment id in row {row}")
        if seg_id in seen_ids:
            raise NetworkError(f"duplicate segment id {seg_id!r} in row {row}")
        try:
            color = parse_hex(color_hex)
        except ValueError as exc:
            raise NetworkError(f"{exc} in row {row}") from None
        if color in seen_colors:
            raise NetworkError(f"duplicate color {color_hex} in row {row} "
                               f"(already used by {seen_colors[color][0]})")
        for end in (from_id, to_id):
            if not is_valid_id(end):
                raise NetworkError(f"malformed intersection id {end!r} in row {row}")
        if from_id == to_id:
            raise NetworkError(f"segment {seg_id} starts and ends at {from_id}")
        seen_ids[seg_id] = tuple(row)
        seen_colors[color] = (seg_id,)
        parsed.append((seg_id, color, from_id, to_id))

    if parsed:
        codes = pack_rgb(mask_arr).ravel()
        wanted = np.array([_code(c) for _, c, _, _ in parsed], dtype=np.int32)
        order = np.argsort(wanted)
        uniq, counts = np.unique(codes, return_counts=True)
        pos = np.searchsorted(uniq, wanted[order])
        pos_clip = np.minimum(pos, len(uniq) - 1)
        hit = uniq[pos_clip] == wanted[order]
        pixel_counts = np.zeros(len(parsed), dtype=np.int64)
        pixel_counts[order] = np.where(hit, counts[pos_clip], 0)
    else:
        pixel_counts = np.zeros(0, dtype=np.int64)

    segments = []
    nodes: set[str] = set()
    for (seg_id, color, from_id, to_id), count in zip(parsed, pixel_counts):
        if count == 0:
            raise NetworkError(f"segment {seg_id}: color {to_hex(color)} does not occur in the mask")
        segments.append(RoadSegment(seg_id, color, from_id, to_id, int(count)))
        nodes.update((from_id, to_id))
    return RoadNetwork(frozenset(nodes), tuple(segments))
