"""Synthetic ground truth: random drivable routes and kinematic speed traces.

The simulator applies the same curve-speed limit the matcher checks, so a
zero-noise trace is physically consistent with its own route.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geo import GeoPoint
from .graph import GraphError, RoadGraph, adjacent_edges
from .pathing import PathingConfig
from .trace import DEFAULT_SAMPLE_RATE_HZ, SpeedTrace, TraceSource, calculated_distance

_GRID_M = 0.5


@dataclass(frozen=True)
class DriverProfile:
    accel: float = 2.0
    decel: float = 3.0
    stop_prob_at_intersection: float = 0.4
    speed_compliance: float = 1.0
    noise_sigma: float = 0.0
    rng_seed: int = 0
    stop_duration: tuple[float, float] = (2.0, 15.0)
    # turns are taken at this fraction of the physical limit
    turn_margin: float = 0.9
    # meters short of the intersection node where the car waits
    stop_offset: float = 2.0
    # seconds of standstill appended after arrival
    park_time: float = 2.0

    def __post_init__(self) -> None:
        if self.accel <= 0 or self.decel <= 0:
            raise ValueError("accel and decel must be positive")
        if not 0.0 <= self.stop_prob_at_intersection <= 1.0:
            raise ValueError("stop probability must be in [0, 1]")
        if self.speed_compliance <= 0 or self.noise_sigma < 0:
            raise ValueError("bad speed_compliance or noise_sigma")
        lo, hi = self.stop_duration
        if not 0 < lo <= hi:
            raise ValueError("bad stop_duration range")


@dataclass(frozen=True, eq=False)
class GroundTruthTrip:
    route: tuple[int, ...]
    trace: SpeedTrace
    endpoint: GeoPoint
    trip_length: float
    start: GeoPoint
    trip_id: str = ""
    stop_nodes: tuple[int, ...] = ()

    def sidecar(self) -> dict:
        return {
            "trip_id": self.trip_id,
            "route": list(self.route),
            "start": {"lat": self.start.lat, "lon": self.start.lon},
            "endpoint": {"lat": self.endpoint.lat, "lon": self.endpoint.lon},
            "trip_length_m": self.trip_length,
            "stop_nodes": list(self.stop_nodes),
        }


def route_length(graph: RoadGraph, route: Sequence[int]) -> float:
    return sum(graph.edge(a, b).length for a, b in zip(route, route[1:]))


def _core_nodes(graph: RoadGraph) -> frozenset[int]:
    """Nodes left after repeatedly peeling off dead ends (the graph's 2-core)."""
    cached = graph._cache.get("synth_core")
    if cached is not None:
        return cached
    nbrs: dict[int, set[int]] = {n: set() for n in graph.nodes}
    for a, edges in graph.adjacency.items():
        for e in edges:
            if e.target != a:
                nbrs[a].add(e.target)
                nbrs[e.target].add(a)
    alive = set(nbrs)
    queue = [n for n in alive if len(nbrs[n]) < 2]
    while queue:
        n = queue.pop()
        if n not in alive:
            continue
        alive.discard(n)
        for m in nbrs[n]:
            nbrs[m].discard(n)
            if m in alive and len(nbrs[m]) < 2:
                queue.append(m)
    core = frozenset(alive)
    graph._cache["synth_core"] = core
    return core


def random_route(graph: RoadGraph, start: int, target_length: float,
                 rng: np.random.Generator) -> list[int]:
    """Random walk from ``start`` that never turns straight back.

    Stops once the length is within 15% of ``target_length``; a walk that
    runs into a dead end ends there. Moves come from
    :func:`~elastic_pathing.graph.adjacent_edges`, so oneway roads and turn
    restrictions are respected. Once on the graph's 2-core the walk avoids
    leaving it, which keeps long walks out of cul-de-sacs.
    """
    if target_length <= 0:
        raise ValueError("target_length must be positive")
    if start not in graph.nodes:
        raise GraphError(f"unknown start node {start}")
    if not graph.adjacency.get(start):
        raise GraphError(f"start node {start} has no outgoing road")
    core = _core_nodes(graph)
    lo, hi = 0.85 * target_length, 1.15 * target_length
    route = [start]
    length = 0.0
    prev: int | None = None
    while length < lo:
        at = route[-1]
        cands = [c for c in adjacent_edges(graph, at, prev) if c.next != prev]
        if not cands:
            break
        if at in core:
            cands = [c for c in cands if c.next in core] or cands
        fitting = [c for c in cands if length + c.edge.length <= hi]
        pool = fitting or cands
        c = pool[int(rng.integers(len(pool)))]
        route.append(c.next)
        length += c.edge.length
        prev = at
    return route


def _tolerance(graph: RoadGraph, node: int, config: PathingConfig) -> float:
    return config.tolerance(graph.node_lanes.get(node, 1))


def _plan_constraints(graph: RoadGraph, route: Sequence[int], profile: DriverProfile,
                      rng: np.random.Generator, config: PathingConfig):
    """Route distances, per-segment speed targets, turn zones and stops."""
    dist = [0.0]
    targets = []
    for a, b in zip(route, route[1:]):
        e = graph.edge(a, b)
        dist.append(dist[-1] + e.length)
        targets.append(e.speed_limit * profile.speed_compliance)
    zones = []  # (lo, hi, cap)
    stops = []  # (position, duration, node)
    for k in range(1, len(route) - 1):
        node = route[k]
        if node not in graph.intersections and graph.degree.get(node, 0) > 1:
            continue
        cand = next(c for c in adjacent_edges(graph, node, route[k - 1]) if c.next == route[k + 1])
        tol = _tolerance(graph, node, config)
        zones.append((dist[k] - tol, dist[k] + tol, cand.max_speed * profile.turn_margin))
        if node in graph.intersections and rng.random() < profile.stop_prob_at_intersection:
            lo_d, hi_d = profile.stop_duration
            pos = max(dist[k] - profile.stop_offset, dist[k - 1] + 0.5 * (dist[k] - dist[k - 1]))
            stops.append((pos, float(rng.uniform(lo_d, hi_d)), node))
    return dist, targets, zones, stops


def _ceiling(grid: np.ndarray, dist: Sequence[float], targets: Sequence[float],
             zones, end: float, decel: float) -> np.ndarray:
    seg = np.clip(np.searchsorted(dist, grid, side="right") - 1, 0, len(targets) - 1)
    cap = np.asarray(targets)[seg]
    for lo, hi, vmax in zones:
        mask = (grid >= lo) & (grid <= hi)
        cap[mask] = np.minimum(cap[mask], vmax)
    cap[grid >= end] = 0.0
    # braking envelope, swept backwards
    out = cap.copy()
    step = grid[1] - grid[0] if len(grid) > 1 else _GRID_M
    for k in range(len(out) - 2, -1, -1):
        reach = math.sqrt(out[k + 1] ** 2 + 2.0 * decel * step)
        if reach < out[k]:
            out[k] = reach
    return out


def simulate_speed(route: Sequence[int], graph: RoadGraph, profile: DriverProfile = DriverProfile(),
                   sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ, rng: np.random.Generator | None = None,
                   config: PathingConfig = PathingConfig(), *, return_stops: bool = False):
    """Sampled speed trace of a driver following ``route``.

    The car starts at rest, accelerates at ``profile.accel`` toward the road's
    speed limit (scaled by ``speed_compliance``), brakes at ``profile.decel``
    so that it is under the turn limit throughout each intersection window,
    waits at intersections with probability ``stop_prob_at_intersection`` and
    comes to rest at the end of the route. Position advances by the trapezoid
    rule between samples, so integrating the clean trace recovers the route
    length. Multiplicative Gaussian noise is applied last.
    """
    if sample_rate_hz < 2.0:
        raise ValueError("sample_rate_hz must be at least 2")
    if len(route) < 2:
        raise ValueError("route needs at least two nodes")
    if rng is None:
        rng = np.random.default_rng(profile.rng_seed)
    dt = 1.0 / sample_rate_hz
    dist, targets, zones, stops = _plan_constraints(graph, route, profile, rng, config)
    total = dist[-1]

    speeds = [0.0]
    s = 0.0
    legs = [(p, d) for p, d, _ in stops] + [(total, profile.park_time)]
    for leg_end, hold in legs:
        n_grid = max(2, int(math.ceil((leg_end - s) / _GRID_M)) + 2)
        grid = s + np.arange(n_grid) * _GRID_M
        ceil = _ceiling(grid, dist, targets, zones, leg_end, profile.decel)
        v = speeds[-1]
        while leg_end - s > 0.3:
            vmax = v + profile.accel * dt

            def allowed(cand: float) -> float:
                return float(np.interp(s + 0.5 * (v + cand) * dt, grid, ceil))

            if vmax <= allowed(vmax):
                nv = vmax
            else:
                lo, hi = 0.0, vmax
                for _ in range(30):
                    mid = 0.5 * (lo + hi)
                    if mid <= allowed(mid):
                        lo = mid
                    else:
                        hi = mid
                nv = lo
            if nv < 0.05 and leg_end - s < 1.0:
                nv = 0.0
            s += 0.5 * (v + nv) * dt
            v = nv
            speeds.append(v)
            if v == 0.0:
                break
        if v != 0.0:
            s += 0.5 * v * dt
            v = 0.0
            speeds.append(0.0)
        speeds.extend([0.0] * int(round(hold * sample_rate_hz)))

    vs = np.asarray(speeds)
    if profile.noise_sigma > 0:
        vs = np.clip(vs * (1.0 + profile.noise_sigma * rng.standard_normal(len(vs))), 0.0, None)
    t = np.arange(len(vs)) * dt
    trace = SpeedTrace(t, vs, TraceSource.SYNTHETIC, sample_rate_hz)
    if return_stops:
        return trace, tuple(node for _, _, node in stops)
    return trace


def generate_trip(graph: RoadGraph, start: int, target_length: float, profile: DriverProfile,
                  rng: np.random.Generator, sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
                  trip_id: str = "", config: PathingConfig = PathingConfig()) -> GroundTruthTrip:
    route = random_route(graph, start, target_length, rng)
    if len(route) < 2:
        raise GraphError(f"no drivable route from {start}")
    trace, stop_nodes = simulate_speed(route, graph, profile, sample_rate_hz, rng, config, return_stops=True)
    return GroundTruthTrip(tuple(route), trace, graph.nodes[route[-1]], route_length(graph, route),
                           graph.nodes[start], trip_id, stop_nodes)


def generate_suite(graph: RoadGraph, n_trips: int, seed: int, profile: DriverProfile = DriverProfile(),
                   length_range: tuple[float, float] = (1000.0, 10000.0),
                   sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ, max_attempts: int = 200,
                   config: PathingConfig = PathingConfig()) -> list[GroundTruthTrip]:
    """``n_trips`` seeded trips from random start nodes with lengths in ``length_range``.

    Walks that dead-end short of the range are redrawn.
    """
    rng = np.random.default_rng(seed)
    starts = np.array(sorted(n for n, es in graph.adjacency.items() if es))
    lo, hi = length_range
    trips = []
    for k in range(n_trips):
        for _ in range(max_attempts):
            start = int(starts[rng.integers(len(starts))])
            target = float(rng.uniform(lo, hi))
            trip = generate_trip(graph, start, target, profile, rng, sample_rate_hz, f"trip{k:03d}", config)
            if lo <= trip.trip_length <= hi:
                break
        else:
            raise GraphError(f"could not draw a trip in {length_range} after {max_attempts} attempts")
        trips.append(trip)
    return trips


def write_trip(trip: GroundTruthTrip, out_dir: str | Path, header: str | None = None) -> tuple[Path, Path]:
    """Write ``<id>.csv`` (trace) and ``<id>.truth.json`` (ground-truth sidecar)."""
    from .trace import write_trace_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{trip.trip_id}.csv"
    json_path = out / f"{trip.trip_id}.truth.json"
    write_trace_csv(trip.trace, csv_path, header_comment=header)
    payload = trip.sidecar()
    if header:
        payload = {"generator": header, **payload}
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


def read_truth(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
