from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from elastic_pathing.geo import EARTH_RADIUS_M, GeoPoint
from elastic_pathing.graph import OsmNode, OsmWay, Oneway, build_graph, graph_from_osm
from elastic_pathing.trace import SpeedTrace, TraceSource

DATA = Path(__file__).parent / "data"
M_PER_DEG = math.pi * EARTH_RADIUS_M / 180.0


def xy(x: float, y: float) -> GeoPoint:
    """Local metric coordinates (east, north) around (0, 0)."""
    return GeoPoint(y / M_PER_DEG, x / M_PER_DEG)


def make_graph(coords: dict[int, tuple[float, float]], ways: list[list[int]], highway: str = "residential",
               oneway: dict[int, Oneway] | None = None, lanes: int | None = None, maxspeed: float | None = None,
               restrictions=()):
    nodes = {k: OsmNode(k, xy(*v)) for k, v in coords.items()}
    oneway = oneway or {}
    ws = [OsmWay(100 + i, tuple(ids), highway, maxspeed, lanes, oneway.get(i, Oneway.NO))
          for i, ids in enumerate(ways)]
    return build_graph(nodes, ws, restrictions)


def grid_graph(n: int = 6, spacing: float = 100.0):
    """n x n street grid; node id = 10*row + col (row, col from 0), one way per street."""
    coords = {10 * r + c: (c * spacing, r * spacing) for r in range(n) for c in range(n)}
    ways = [[10 * r + c for c in range(n)] for r in range(n)] + [[10 * r + c for r in range(n)] for c in range(n)]
    return make_graph(coords, ways)


def piecewise_trace(pieces: list[tuple[float, float, float]], hz: float = 2.0) -> SpeedTrace:
    """Trace from (duration s, v_start, v_end) linear pieces, sampled at ``hz``."""
    knots_t, knots_v = [0.0], [pieces[0][1]]
    for dur, v0, v1 in pieces:
        if abs(knots_v[-1] - v0) > 1e-12:
            raise ValueError("pieces must be continuous")
        knots_t.append(knots_t[-1] + dur)
        knots_v.append(v1)
    n = int(round(knots_t[-1] * hz)) + 1
    t = np.arange(n) / hz
    return SpeedTrace(t, np.interp(t, knots_t, knots_v), TraceSource.SYNTHETIC, hz)


@pytest.fixture(scope="session")
def suburb():
    return graph_from_osm(DATA / "fi_suburb.osm")


@pytest.fixture(scope="session")
def helsinki():
    return graph_from_osm(DATA / "helsinki_center.osm")


# criterion number -> PASS/FAIL line, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
