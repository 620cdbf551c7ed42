import math

import pytest
from hypothesis import given, settings, strategies as st

from elastic_pathing.graph import (FORMAT_MAGIC, GraphError, GraphFormatError, OsmParseError, Oneway,
                                   RestrictionKind, TurnRestriction, adjacent_edges, build_graph, count_paths,
                                   graph_from_osm, is_valid_walk, load_graph, parse_osm, save_graph)

from conftest import grid_graph, make_graph

OSM = b"""<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="0.0" lon="0.0"/>
  <node id="2" lat="0.0" lon="0.001"/>
  <node id="3" lat="0.0" lon="0.002"/>
  <node id="4" lat="0.001" lon="0.001"/>
  <node id="5" lat="-0.001" lon="0.001"/>
  <way id="10"><nd ref="1"/><nd ref="2"/><nd ref="3"/>
    <tag k="highway" v="primary"/><tag k="maxspeed" v="30 mph"/><tag k="lanes" v="3"/></way>
  <way id="11"><nd ref="4"/><nd ref="2"/><tag k="highway" v="residential"/><tag k="oneway" v="yes"/></way>
  <way id="12"><nd ref="2"/><nd ref="5"/><nd ref="99"/><tag k="highway" v="service"/></way>
  <way id="13"><nd ref="1"/><nd ref="4"/><tag k="highway" v="footway"/></way>
  <relation id="20"><member type="way" ref="10" role="from"/><member type="node" ref="2" role="via"/>
    <member type="way" ref="12" role="to"/><tag k="type" v="restriction"/>
    <tag k="restriction" v="no_right_turn"/></relation>
</osm>
"""


@pytest.fixture()
def small():
    return graph_from_osm(OSM)


def test_parse_counts_and_tags():
    parsed = parse_osm(OSM)
    assert [w.id for w in parsed.ways] == [10, 11, 12]
    assert parsed.dropped == 1  # node 99
    w10 = parsed.ways[0]
    assert w10.maxspeed == pytest.approx(30 * 0.44704) and w10.lanes == 3
    assert parsed.ways[1].oneway is Oneway.FORWARD
    assert parsed.restrictions == [TurnRestriction(10, 2, 12, RestrictionKind.NO_TURN)]


def test_malformed_xml_reports_offset():
    bad = OSM[:200]
    with pytest.raises(OsmParseError) as info:
        parse_osm(bad)
    assert 0 < info.value.byte_offset <= len(bad)


def test_intersections_and_degree(small):
    assert small.is_intersection(2)
    assert not small.is_intersection(3)
    assert small.degree[1] == 1 and small.is_dead_end(1)
    assert small.node_lanes[2] == 3


def test_oneway_respected(small):
    assert small.has_edge(4, 2) and not small.has_edge(2, 4)


def test_restriction_and_u_turns(small):
    from_west = {c.next for c in adjacent_edges(small, 2, 1)}
    assert from_west == {3}  # 5 banned, 4 is against the oneway, no U-turn
    from_north = {c.next for c in adjacent_edges(small, 2, 4)}
    assert from_north == {1, 3, 5}
    # dead end offers only the U-turn
    back = adjacent_edges(small, 1, 2)
    assert [(c.next, c.angle) for c in back] == [(2, 180.0)]


def test_candidate_angles_and_speeds(small):
    cands = {c.next: c for c in adjacent_edges(small, 2, 4)}
    assert cands[5].angle == pytest.approx(0.0, abs=1e-3)
    assert cands[1].angle == pytest.approx(90.0, abs=1e-3)
    assert cands[1].max_speed < cands[5].max_speed


def test_only_turn_restriction():
    g = make_graph({1: (0, 0), 2: (100, 0), 3: (200, 0), 4: (100, 100)}, [[1, 2], [2, 3], [2, 4]],
                   restrictions=[TurnRestriction(100, 2, 102, RestrictionKind.ONLY_TURN)])
    assert {c.next for c in adjacent_edges(g, 2, 1)} == {4}
    assert {c.next for c in adjacent_edges(g, 2, 3)} == {1, 4}


def test_unknown_node_and_bad_arrival(small):
    with pytest.raises(GraphError):
        adjacent_edges(small, 12345)
    with pytest.raises(GraphError):
        adjacent_edges(small, 2, 3 if not small.has_edge(3, 2) else 5 + 1000)


def test_empty_graph_rejected():
    with pytest.raises(GraphError):
        build_graph({}, [])


def test_nearest_node(small):
    from elastic_pathing.geo import GeoPoint
    node, d = small.nearest_node(GeoPoint(0.0, 0.00101))
    assert node == 2 and d < 2.0


def test_save_load_round_trip(tmp_path, small):
    p = tmp_path / "g.epg"
    save_graph(small, p)
    assert p.read_bytes()[:8] == FORMAT_MAGIC
    assert load_graph(p) == small


def test_real_extract_round_trip(tmp_path, suburb):
    p = tmp_path / "s.epg"
    save_graph(suburb, p)
    back = load_graph(p)
    assert back == suburb
    assert len(back.intersections) == len(suburb.intersections)


@pytest.mark.parametrize("damage", ["magic", "crc", "truncate", "version"])
def test_corrupt_containers(tmp_path, small, damage):
    p = tmp_path / "g.epg"
    save_graph(small, p)
    raw = bytearray(p.read_bytes())
    if damage == "magic":
        raw[0] ^= 0xFF
    elif damage == "crc":
        raw[-1] ^= 0xFF
    elif damage == "truncate":
        raw = raw[:-5]
    else:
        raw[8] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(GraphFormatError):
        load_graph(p)


def test_real_extract_has_restrictions(helsinki):
    assert sum(len(v) for v in helsinki.restrictions.values()) > 0
    assert len(helsinki.intersections) > 100


# -- path counting ----------------------------------------------------------------

def brute_force_counts(g, start, depth):
    """Walks of exactly k edges for k = 1..depth, enumerated from raw adjacency.

    No immediate reversal, no directed edge used twice. Independent of
    adjacent_edges, so only valid on graphs without oneways or restrictions.
    """
    counts = [0] * depth

    def rec(at, prev, used, k):
        for e in g.adjacency[at]:
            if e.target == prev or (at, e.target) in used:
                continue
            counts[k] += 1
            if k + 1 < depth:
                rec(e.target, at, used | {(at, e.target)}, k + 1)

    rec(start, None, frozenset(), 0)
    return counts


@pytest.mark.parametrize("start", [0, 22, 35, 3])
def test_count_paths_matches_brute_force(start):
    g = grid_graph(6, 100.0)
    hist = count_paths(g, start, 600.0, 100.0)
    assert list(hist.counts) == brute_force_counts(g, start, 6)
    assert not hist.truncated


def test_count_paths_grows_exponentially():
    g = grid_graph(6, 100.0)
    counts = count_paths(g, 22, 800.0, 100.0).counts
    logs = [math.log(c) for c in counts]
    assert all(b > a for a, b in zip(logs, logs[1:]))


def test_count_paths_dead_end_drop():
    # start 50 m from a cul-de-sac, 300 m of road before a grid
    coords = {1: (-50.0, 0.0), 2: (0.0, 0.0), 3: (300.0, 0.0), 4: (300.0, 100.0), 5: (300.0, -100.0),
              6: (400.0, 100.0), 7: (400.0, -100.0), 8: (400.0, 0.0)}
    g = make_graph(coords, [[1, 2, 3, 8], [5, 3, 4], [4, 6, 8, 7, 5]])
    counts = count_paths(g, 2, 600.0, 25.0).counts
    assert counts[0] == 2  # both directions alive at 25 m
    assert counts[2] == 1  # the cul-de-sac direction is gone by 75 m
    assert counts[-1] > counts[0]


def test_count_paths_cap():
    g = grid_graph(6, 100.0)
    hist = count_paths(g, 22, 1500.0, 100.0, cap=500)
    assert hist.truncated and hist.enumerated == 500


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_random_walks_are_valid(data):
    g = grid_graph(5, 80.0)
    seq = [data.draw(st.sampled_from(sorted(g.nodes)))]
    prev = None
    for _ in range(data.draw(st.integers(1, 12))):
        cands = adjacent_edges(g, seq[-1], prev)
        c = data.draw(st.sampled_from(cands))
        prev = seq[-1]
        seq.append(c.next)
    assert is_valid_walk(g, seq)
    assert not is_valid_walk(g, seq + [seq[-1]])
