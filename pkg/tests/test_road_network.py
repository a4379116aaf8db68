import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from congestion_lab.errors import NetworkError
from congestion_lab.road_network import (RoadNetwork, RoadSegment, incoming_segments, load_network,
                                         neighbors, outgoing_segments, parse_hex, read_registry,
                                         to_hex, validate, write_registry)


def hand_mask():
    """8x8 mask: 10 red pixels, 12 green pixels, rest black."""
    mask = np.zeros((8, 8, 3), dtype=np.uint8)
    red = [(r, c) for r in range(2) for c in range(5)]          # 10
    green = [(r, c) for r in range(4, 7) for c in range(4)]     # 12
    for r, c in red:
        mask[r, c] = (255, 0, 0)
    for r, c in green:
        mask[r, c] = (0, 255, 0)
    return mask


def test_load_two_segments_counts_pixels():
    reg = [("s1", "#FF0000", "A", "B"), ("s2", "#00FF00", "B", "A")]
    net = load_network(reg, hand_mask())
    assert net.node_ids == ["A", "B"]
    assert [s.pixel_count for s in net.segments] == [10, 12]
    assert validate(net) == []


def test_empty_registry_blank_mask():
    net = load_network([], np.zeros((4, 4, 3), dtype=np.uint8))
    assert net.intersections == frozenset() and net.segments == ()


def test_city_scale_network_loads():
    # 45 intersections and 155 directed segments, each painted in its own color.
    rng = np.random.default_rng(3)
    nodes = [f"n{i}" for i in range(45)]
    pairs = set()
    for i in range(45):
        pairs.add((nodes[i], nodes[(i + 1) % 45]))
    while len(pairs) < 155:
        a, b = rng.choice(45, 2, replace=False)
        pairs.add((nodes[a], nodes[b]))
    mask = np.zeros((160, 4, 3), dtype=np.uint8)
    reg = []
    for k, (a, b) in enumerate(sorted(pairs)):
        color = (k + 1, 0, 7)
        mask[k, :2] = color
        reg.append((f"seg{k:03d}", to_hex(color), a, b))
    net = load_network(reg, mask)
    assert len(net.segments) == 155 and len(net.intersections) == 45


@pytest.mark.parametrize("rows, needle", [
    ([("s1", "#FF0000", "A", "B"), ("s1", "#00FF00", "B", "A")], "duplicate segment id"),
    ([("s1", "#FF0000", "A", "B"), ("s2", "#ff0000", "B", "A")], "duplicate color"),
    ([("s1", "#0000FF", "A", "B")], "s1"),
    ([("s1", "#FF0000", "A b", "B")], "malformed"),
    ([("s1", "#FF0000", "", "B")], "malformed"),
    ([("s1", "#FF0000", "A", "A")], "starts and ends"),
])
def test_load_rejections(rows, needle):
    with pytest.raises(NetworkError, match=needle):
        load_network(rows, hand_mask())


def test_incoming_two_node():
    net = load_network([("s1", "#FF0000", "A", "B"), ("s2", "#00FF00", "B", "A")], hand_mask())
    assert [s.id for s in incoming_segments(net, "B")] == ["s1"]
    with pytest.raises(KeyError):
        incoming_segments(net, "Z")


def test_incoming_star_in_id_order():
    segs = [RoadSegment(sid, (i, 1, 1), f"L{i}", "H", 1) for i, sid in enumerate(["d", "b", "c", "a"])]
    net = RoadNetwork(frozenset(["H", "L0", "L1", "L2", "L3"]), tuple(segs))
    assert [s.id for s in incoming_segments(net, "H")] == ["a", "b", "c", "d"]
    assert incoming_segments(net, "L0") == []


def test_neighbors(triangle):
    assert neighbors(triangle, "B") == ["A", "C"]
    one_way = RoadNetwork(frozenset(["A", "B", "Z"]), (RoadSegment("x", (1, 1, 1), "A", "B", 1),))
    assert neighbors(one_way, "A") == ["B"] and neighbors(one_way, "B") == ["A"]
    assert neighbors(one_way, "Z") == []
    with pytest.raises(KeyError):
        neighbors(one_way, "Q")


def test_validate_reports():
    dup = RoadNetwork(frozenset("AB"), (RoadSegment("x", (1, 1, 1), "A", "B", 1),
                                        RoadSegment("y", (1, 1, 1), "B", "A", 1)))
    issues = validate(dup)
    assert [i.kind for i in issues] == ["color collision"] and issues[0].subjects == ("x", "y")
    dangling = RoadNetwork(frozenset("A"), (RoadSegment("x", (1, 1, 1), "A", "B", 1),))
    assert [i.kind for i in validate(dangling)] == ["dangling endpoint"]
    zero = RoadNetwork(frozenset("AB"), (RoadSegment("x", (1, 1, 1), "A", "B", 0),))
    assert [i.kind for i in validate(zero)] == ["zero-pixel segment"]


def test_hex_helpers():
    assert parse_hex("#0a0B0c") == (10, 11, 12)
    assert to_hex((10, 11, 12)) == "#0A0B0C"
    with pytest.raises(ValueError):
        parse_hex("0A0B0C")


@st.composite
def random_networks(draw):
    n = draw(st.integers(2, 7))
    nodes = [f"n{i}" for i in range(n)]
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                          .filter(lambda p: p[0] != p[1]), min_size=1, max_size=15, unique=True))
    return nodes, pairs


def _net_from(nodes, pairs):
    mask = np.zeros((len(pairs), 3, 3), dtype=np.uint8)
    reg = []
    for k, (a, b) in enumerate(pairs):
        color = (k + 1, 2 * k + 1, 5)
        mask[k, : 1 + k % 3] = color
        reg.append((f"s{k:02d}", to_hex(color), nodes[a], nodes[b]))
    return load_network(reg, mask), mask


@settings(max_examples=60, deadline=None)
@given(random_networks())
def test_graph_properties(data):
    nodes, pairs = data
    net, mask = _net_from(nodes, pairs)
    for node in net.node_ids:
        inc, out = incoming_segments(net, node), outgoing_segments(net, node)
        touching = {s.id for s in net.segments if node in (s.from_id, s.to_id)}
        assert {s.id for s in inc} | {s.id for s in out} == touching
        assert not {s.id for s in inc} & {s.id for s in out}
        for other in neighbors(net, node):
            assert node in neighbors(net, other)
    assert sum(s.pixel_count for s in net.segments) <= mask.shape[0] * mask.shape[1]


@settings(max_examples=30, deadline=None)
@given(random_networks())
def test_registry_round_trip(tmp_path_factory, data):
    nodes, pairs = data
    net, mask = _net_from(nodes, pairs)
    path = tmp_path_factory.mktemp("reg") / "registry.csv"
    write_registry(net, path)
    again = load_network(read_registry(path), mask)
    assert again == net
