import datetime as dt

import numpy as np
import pytest

from congestion_lab.frame_extraction import DEFAULT_PALETTE
from congestion_lab.road_network import RoadNetwork, RoadSegment
from congestion_lab.series_store import IntensityMatrix


def seg(sid, a, b, color, pixels=1):
    return RoadSegment(sid, color, a, b, pixels)


@pytest.fixture
def triangle():
    """A<->B, B<->C with distinct colors."""
    segs = [seg("AB", "A", "B", (1, 0, 0)), seg("BA", "B", "A", (2, 0, 0)),
            seg("BC", "B", "C", (3, 0, 0)), seg("CB", "C", "B", (4, 0, 0))]
    return RoadNetwork(frozenset("ABC"), tuple(segs))


@pytest.fixture
def palette():
    return DEFAULT_PALETTE


def day_matrix(values, columns=("A",), day=dt.date(2019, 11, 4), step_s=30, start_s=6 * 3600):
    """Matrix of consecutive rows starting at ``start_s`` on ``day``."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    base = np.datetime64(day.isoformat(), "s") + np.timedelta64(start_s, "s")
    ts = base + np.arange(len(values)) * np.timedelta64(step_s, "s")
    return IntensityMatrix(ts, tuple(columns), values)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
