"""Elastic pathing: best-first reconstruction of a driven route from a speed
trace and a known start location.

A candidate route advances along the road at the distance integrated from
the trace. Whenever the trace and the road disagree at a feature (an
intersection or a stop) the distance since the last landmark is stretched
or compressed so they line up, the route is pinned there and its error
grows by the amount of distortion. The search always expands the
lowest-error candidate first.
"""

from __future__ import annotations

import enum
import heapq
import math
import weakref
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geo import GeoPoint, interpolate
from .graph import Candidate, GraphError, RoadGraph, adjacent_edges
from .trace import SpeedTrace, TraceError


class PathingError(ValueError):
    pass


class SnapError(PathingError):
    pass


class PinError(AssertionError):
    """A pin would break the strictly increasing landmark order."""


@dataclass(frozen=True)
class PathingConfig:
    delta: float = 1.2
    v_stop: float = 0.5
    max_stretch_ratio: float = 1.25
    max_partial_paths: int = 100_000
    intersection_tolerance_base: float = 3.7
    car_gap: float = 5.5
    snap_radius: float = 50.0
    # expansion budget; keeps a single trace from running unbounded
    max_expansions: int = 60_000
    check_optimality: bool = False
    # reject a road when the trace exceeds its speed limit by this factor
    # (None disables the check)
    speed_limit_factor: float | None = None

    def __post_init__(self) -> None:
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.max_stretch_ratio <= 1:
            raise ValueError("max_stretch_ratio must be > 1")
        if self.v_stop <= 0:
            raise ValueError("v_stop must be positive")
        if self.speed_limit_factor is not None and self.speed_limit_factor <= 0:
            raise ValueError("speed_limit_factor must be positive")
        if self.max_partial_paths < 1 or self.max_expansions < 1:
            raise ValueError("budgets must be positive")

    def tolerance(self, lanes: int) -> float:
        return self.intersection_tolerance_base * lanes + self.car_gap


class LandmarkKind(str, enum.Enum):
    INTERSECTION = "intersection_pin"
    STOP = "stop_pin"
    TURN = "turn_pin"


@dataclass(frozen=True, slots=True)
class Landmark:
    trace_index: int
    way_id: int | None
    node_id: int  # node the offset is measured from
    offset: float  # meters past node_id along the route
    route_distance: float
    kind: LandmarkKind
    stretch_ratio: float = 1.0


class _Chain:
    """Persistent singly linked list: cheap to share between branches."""

    __slots__ = ("value", "parent", "size")

    def __init__(self, value, parent: "_Chain | None"):
        self.value = value
        self.parent = parent
        self.size = 1 if parent is None else parent.size + 1

    def to_list(self) -> list:
        out = []
        c: _Chain | None = self
        while c is not None:
            out.append(c.value)
            c = c.parent
        out.reverse()
        return out


class PartialPath:
    """A candidate route under construction.

    ``nodes`` holds (node id, route distance) pairs; the last two entries
    are the segment currently being driven. ``pin_index``/``pin_distance``
    anchor the predicted position: at sample k the vehicle is predicted at
    ``pin_distance + cum[k] - cum[pin_index]`` meters along the route.
    """

    __slots__ = ("nodes", "marks", "error", "cursor", "pin_index", "pin_distance",
                 "branch_distance", "end_distance", "_seq")

    def __init__(self, nodes: _Chain, marks: _Chain | None, error: float, cursor: int,
                 pin_index: int, pin_distance: float, branch_distance: float,
                 end_distance: float | None = None):
        self.nodes = nodes
        self.marks = marks
        self.error = error
        self.cursor = cursor
        self.pin_index = pin_index
        self.pin_distance = pin_distance
        self.branch_distance = branch_distance  # route distance of the last branch node passed
        self.end_distance = end_distance  # set once the path is complete
        self._seq: tuple[int, ...] | None = None

    @classmethod
    def at_start(cls, node: int) -> "PartialPath":
        return cls(_Chain((node, 0.0), None), None, 0.0, 0, 0, 0.0, 0.0)

    def _copy(self, **changes) -> "PartialPath":
        p = PartialPath(self.nodes, self.marks, self.error, self.cursor, self.pin_index,
                        self.pin_distance, self.branch_distance, self.end_distance)
        for k, v in changes.items():
            setattr(p, k, v)
        if "nodes" in changes:
            p._seq = None
        else:
            p._seq = self._seq
        return p

    @property
    def complete(self) -> bool:
        return self.end_distance is not None

    @property
    def node_sequence(self) -> tuple[int, ...]:
        if self._seq is None:
            self._seq = tuple(n for n, _ in self.nodes.to_list())
        return self._seq

    @property
    def landmarks(self) -> list[Landmark]:
        return self.marks.to_list() if self.marks is not None else []

    @property
    def last_landmark(self) -> Landmark | None:
        return self.marks.value if self.marks is not None else None

    @property
    def trace_cursor(self) -> int:
        return self.cursor

    @property
    def head(self) -> tuple[int, float]:
        return self.nodes.value

    @property
    def tail(self) -> tuple[int, float] | None:
        return self.nodes.parent.value if self.nodes.parent is not None else None

    def position_at(self, cumdist: np.ndarray, k: int) -> float:
        return self.pin_distance + float(cumdist[k] - cumdist[self.pin_index])

    def __repr__(self) -> str:
        return (f"PartialPath(error={self.error:.3f}, cursor={self.cursor}, "
                f"nodes={self.nodes.size}, complete={self.complete})")


@dataclass(frozen=True)
class PathResult:
    node_sequence: tuple[int, ...]
    endpoint: GeoPoint
    error: float
    landmarks: tuple[Landmark, ...]
    consumed_samples: int
    route_length: float
    best_effort: bool = False


@dataclass(frozen=True)
class SearchOutcome:
    results: list[PathResult]
    expansions: int
    frontier_size: int
    frontier_min_error: float
    budget_exhausted: bool


# -- per-trace precomputation -------------------------------------------------

class _TraceIndex:
    __slots__ = ("cum", "v", "n", "next_slow", "run_end")

    def __init__(self, trace: SpeedTrace, v_stop: float):
        v = trace.v
        n = len(v)
        slow = v < v_stop
        next_slow = np.full(n + 1, n, dtype=np.int64)
        run_end = np.full(n, -1, dtype=np.int64)
        nxt = n
        end = -1
        for k in range(n - 1, -1, -1):
            if slow[k]:
                nxt = k
                end = k if (k == n - 1 or not slow[k + 1]) else end
                run_end[k] = end
            next_slow[k] = nxt
        self.cum = trace.cumdist
        self.v = v
        self.n = n
        self.next_slow = next_slow.tolist()
        self.run_end = run_end.tolist()


_index_cache: "weakref.WeakKeyDictionary[SpeedTrace, dict[float, _TraceIndex]]" = weakref.WeakKeyDictionary()


def _trace_index(trace: SpeedTrace, v_stop: float) -> _TraceIndex:
    per = _index_cache.setdefault(trace, {})
    idx = per.get(v_stop)
    if idx is None:
        idx = per[v_stop] = _TraceIndex(trace, v_stop)
    return idx


# -- primitive operations -----------------------------------------------------

def pin(path: PartialPath, landmark: Landmark) -> PartialPath:
    """Freeze ``path`` at ``landmark``; later distortion is measured from here."""
    last = path.last_landmark
    floor = last.trace_index if last is not None else -1
    if landmark.trace_index <= floor:
        raise PinError(f"pin at sample {landmark.trace_index} does not follow sample {floor}")
    return path._copy(marks=_Chain(landmark, path.marks), pin_index=landmark.trace_index,
                      pin_distance=landmark.route_distance)


def distortion_ratio(actual_road_distance: float, calculated: float) -> float:
    if calculated <= 0:
        raise ValueError("calculated distance must be positive")
    return actual_road_distance / calculated


def apply_distortion(path: PartialPath, landmark: Landmark, actual_road_distance: float,
                     calculated: float, config: PathingConfig) -> PartialPath | None:
    """Reconcile ``calculated`` trace distance onto ``actual_road_distance`` of road.

    Returns the pinned path with error increased by |ln ratio| * calculated,
    or ``None`` when the ratio falls outside the allowed stretch bounds.
    """
    ratio = distortion_ratio(actual_road_distance, calculated)
    bound = config.max_stretch_ratio
    if not (1.0 / bound - 1e-12 <= ratio <= bound + 1e-12):
        return None
    lm = Landmark(landmark.trace_index, landmark.way_id, landmark.node_id, landmark.offset,
                  landmark.route_distance, landmark.kind, ratio)
    pinned = pin(path, lm)
    pinned.error = path.error + abs(math.log(ratio)) * calculated
    return pinned


def rank(paths: Iterable[PartialPath | PathResult]) -> list:
    """Ascending error, then more trace consumed, then node sequence."""
    def key(p):
        consumed = p.cursor if isinstance(p, PartialPath) else p.consumed_samples
        if isinstance(p, PartialPath) and p.complete:
            consumed = math.inf
        return (p.error, -consumed, tuple(p.node_sequence))
    return sorted(paths, key=key)


# -- search ----------------------------------------------------------------------

class _Context:
    def __init__(self, graph: RoadGraph, trace: SpeedTrace, config: PathingConfig):
        self.graph = graph
        self.trace = trace
        self.config = config
        self.idx = _trace_index(trace, config.v_stop)
        self.tol_cache: dict[int, float] = {}

    def tol(self, node: int) -> float:
        t = self.tol_cache.get(node)
        if t is None:
            t = self.tol_cache[node] = self.config.tolerance(self.graph.node_lanes.get(node, 1))
        return t

    def is_branch(self, node: int) -> bool:
        g = self.graph
        return node in g.intersections or g.degree.get(node, 0) <= 1


def _first_at_or_after(cum: np.ndarray, lo: int, target: float) -> int:
    """Smallest k >= lo with cum[k] >= target (len(cum) if none)."""
    k = int(np.searchsorted(cum, target, side="left"))
    return max(k, lo)


def _last_at_or_before(cum: np.ndarray, target: float) -> int:
    return int(np.searchsorted(cum, target, side="right")) - 1


def _extend_to_branch(ctx: _Context, path: PartialPath) -> PartialPath | None:
    """Follow shape nodes until the head is an intersection or a dead end."""
    g = ctx.graph
    nodes = path.nodes
    changed = False
    while True:
        head, dist = nodes.value
        if ctx.is_branch(head) or nodes.parent is None:
            break
        prev = nodes.parent.value[0]
        cands = adjacent_edges(g, head, prev)
        if len(cands) != 1:
            if not cands:
                return None
            break
        c = cands[0]
        nodes = _Chain((c.next, dist + c.edge.length), nodes)
        changed = True
    return path._copy(nodes=nodes) if changed else path


def _complete(path: PartialPath, end_distance: float, n: int) -> PartialPath:
    return path._copy(end_distance=end_distance, cursor=n)


def _landmark_at_node(path: PartialPath, node: int, distance: float, trace_index: int,
                      kind: LandmarkKind, way_id: int | None) -> Landmark:
    return Landmark(trace_index, way_id, node, 0.0, distance, kind)


def _landmark_at_position(path: PartialPath, position: float, trace_index: int,
                          kind: LandmarkKind) -> Landmark:
    # reference the last chain node at or before the position
    c = path.nodes
    while c.parent is not None and c.value[1] > position:
        c = c.parent
    node, d = c.value
    return Landmark(trace_index, None, node, position - d, position, kind)


def _branch_onto(ctx: _Context, path: PartialPath, cand: Candidate, head_dist: float) -> PartialPath:
    return path._copy(nodes=_Chain((cand.next, head_dist + cand.edge.length), path.nodes),
                      branch_distance=head_dist)


def _start_branches(ctx: _Context, path: PartialPath) -> list[PartialPath]:
    start, _ = path.head
    out = []
    for cand in adjacent_edges(ctx.graph, start, None):
        out.append(path._copy(nodes=_Chain((cand.next, cand.edge.length), path.nodes)))
    return out


def goto_branch(path: PartialPath, trace: SpeedTrace, graph: RoadGraph,
                config: PathingConfig) -> list[PartialPath]:
    """Advance ``path`` to its next feature and return every continuation."""
    return _goto_branch(_Context(graph, trace, config), path)


def _goto_branch(ctx: _Context, path: PartialPath) -> list[PartialPath]:
    if path.complete:
        raise PathingError("path is already complete")
    idx = ctx.idx
    cum, v, n = idx.cum, idx.v, idx.n
    cfg = ctx.config
    if path.nodes.parent is None:
        if not ctx.graph.adjacency.get(path.head[0]):
            return []
        return _start_branches(ctx, path)

    extended = _extend_to_branch(ctx, path)
    if extended is None:
        return []
    path = extended
    head, head_dist = path.head
    tol = ctx.tol(head)
    base = float(cum[path.pin_index]) - path.pin_distance  # cum value minus route distance
    i = path.cursor

    window_start = _first_at_or_after(cum, path.pin_index, head_dist - tol + base)
    z = idx.next_slow[i]

    if z < n and z < window_start:
        return _stop_feature(ctx, path, z, base)
    if z < n and idx.run_end[z] == n - 1 and z <= _first_at_or_after(cum, window_start, head_dist + base):
        # the trip ends in the window of this node
        return [_complete(path, min(float(cum[z]) - base, head_dist), n)]
    if window_start >= n:
        return [_complete(path, path.pin_distance + float(cum[n - 1] - cum[path.pin_index]), n)]
    return _intersection_feature(ctx, path, window_start, base)


def _stop_feature(ctx: _Context, path: PartialPath, z: int, base: float) -> list[PartialPath]:
    idx = ctx.idx
    cum, n = idx.cum, idx.n
    cfg = ctx.config
    b = idx.run_end[z]
    pos = float(cum[z]) - base
    if b == n - 1:
        return [_complete(path, pos, n)]
    nxt = b + 1

    # at a branch node already (the last one passed, or the start)
    if abs(pos - path.branch_distance) <= _branch_tol(ctx, path):
        floor = path.last_landmark.trace_index if path.marks is not None else 0
        if b > floor and b > path.pin_index:
            lm = _landmark_at_position(path, pos, b, LandmarkKind.STOP)
            path = pin(path, lm)
        return [path._copy(cursor=nxt)]

    out = []
    calc = float(cum[z] - cum[path.pin_index])
    if calc <= 0:
        return []
    head, head_dist = path.head
    way = _current_way(ctx, path)
    # stretchB: the stop really happened at the next branch node
    fore = _landmark_at_node(path, head, head_dist, b, LandmarkKind.STOP, way)
    p = apply_distortion(path, fore, head_dist - path.pin_distance, calc, cfg)
    if p is not None:
        out.append(p._copy(cursor=nxt))
    # compressB: ... or at the last branch node passed, if it lies after the pin
    back_dist = path.branch_distance
    if back_dist > path.pin_distance + 1e-6:
        back_node = _node_at_distance(path, back_dist)
        back = _landmark_at_node(path, back_node, back_dist, b, LandmarkKind.STOP, way)
        p = apply_distortion(path, back, back_dist - path.pin_distance, calc, cfg)
        if p is not None:
            out.append(p._copy(cursor=nxt))
    return out


def _branch_tol(ctx: _Context, path: PartialPath) -> float:
    node = _node_at_distance(path, path.branch_distance)
    return ctx.tol(node)


def _node_at_distance(path: PartialPath, distance: float) -> int:
    c = path.nodes
    while c is not None:
        if abs(c.value[1] - distance) <= 1e-9:
            return c.value[0]
        if c.value[1] < distance:
            break
        c = c.parent
    raise PathingError(f"no route node at distance {distance}")


def _current_way(ctx: _Context, path: PartialPath) -> int | None:
    tail = path.tail
    if tail is None:
        return None
    try:
        return ctx.graph.edge(tail[0], path.head[0]).way_id
    except GraphError:
        return None


def _segment_limit(ctx: _Context, path: PartialPath) -> float:
    """Highest speed limit on the road driven since the last branch node."""
    limit = 0.0
    c = path.nodes
    while c.parent is not None and c.value[1] > path.branch_distance + 1e-9:
        limit = max(limit, ctx.graph.edge(c.parent.value[0], c.value[0]).speed_limit)
        c = c.parent
    return limit


def _too_fast(ctx: _Context, path: PartialPath, i0: int, i1: int) -> bool:
    factor = ctx.config.speed_limit_factor
    if factor is None or i1 < i0:
        return False
    limit = _segment_limit(ctx, path)
    return limit > 0 and float(ctx.idx.v[i0:i1 + 1].max()) > factor * limit


def _intersection_feature(ctx: _Context, path: PartialPath, ws: int, base: float) -> list[PartialPath]:
    idx = ctx.idx
    cum, v, n = idx.cum, idx.v, idx.n
    cfg = ctx.config
    head, head_dist = path.head
    tol = ctx.tol(head)
    crossing = _first_at_or_after(cum, ws, head_dist + base)
    if crossing >= n:
        # trace ends while approaching the node
        return [_complete(path, float(cum[n - 1]) - base, n)]
    we = max(_last_at_or_before(cum, head_dist + tol + base), crossing)
    if _too_fast(ctx, path, path.cursor, crossing - 1):
        return []
    lo = ws
    if ws == crossing and crossing - 1 >= path.pin_index:
        # no sample fell inside the window before the node; use the bracketing pair
        lo = crossing - 1
    vmin = float(v[lo:we + 1].min())

    prev = path.tail[0]
    cands = adjacent_edges(ctx.graph, head, prev)
    if not cands:
        return []
    out: list[PartialPath] = []
    floor = path.last_landmark.trace_index if path.marks is not None else -1
    pinned: PartialPath | None = None
    R = cfg.max_stretch_ratio
    road = head_dist - path.pin_distance
    way = _current_way(ctx, path)
    pin_cum = float(cum[path.pin_index])

    # The node is a landmark when the car stopped there, or slowed enough for
    # a turn that is tighter than the arriving road's speed limit allows.
    # A fast pass straight through carries no positional evidence.
    arrival_limit = ctx.graph.edge(prev, head).speed_limit
    evidence = vmin < cfg.v_stop or any(vmin <= c.max_speed < arrival_limit for c in cands)
    for cand in cands:
        if vmin <= cand.max_speed:
            if evidence:
                if pinned is None:
                    if crossing > floor and crossing > path.pin_index:
                        pos = float(cum[crossing]) - base
                        pinned = pin(path, _landmark_at_position(path, pos, crossing, LandmarkKind.INTERSECTION))
                    else:
                        pinned = path
                    pinned = pinned._copy(cursor=max(crossing, path.cursor))
                out.append(_branch_onto(ctx, pinned, cand, head_dist))
            else:
                out.append(_branch_onto(ctx, path._copy(cursor=max(crossing, path.cursor)), cand, head_dist))
            continue
        if road <= 0:
            continue
        limit = cand.max_speed
        # stretchA: the turn happened earlier, at the last slow sample before the window
        lo_j = max(path.pin_index + 1, _first_at_or_after(cum, 0, pin_cum + road / R))
        hi_j = ws - 1
        if hi_j >= lo_j:
            seg = np.flatnonzero(v[lo_j:hi_j + 1] <= limit)
            if seg.size:
                j = lo_j + int(seg[-1])
                calc = float(cum[j]) - pin_cum
                if calc > 0:
                    lm = _landmark_at_node(path, head, head_dist, j, LandmarkKind.TURN, way)
                    p = apply_distortion(path, lm, road, calc, cfg)
                    if p is not None:
                        out.append(_branch_onto(ctx, p._copy(cursor=j), cand, head_dist))
        # compressA: the turn happened later, at the first slow sample after the window
        lo_j = we + 1
        hi_j = min(n - 1, _last_at_or_before(cum, pin_cum + road * R))
        if hi_j >= lo_j:
            seg = np.flatnonzero(v[lo_j:hi_j + 1] <= limit)
            if seg.size:
                j = lo_j + int(seg[0])
                calc = float(cum[j]) - pin_cum
                if calc > 0:
                    lm = _landmark_at_node(path, head, head_dist, j, LandmarkKind.TURN, way)
                    p = apply_distortion(path, lm, road, calc, cfg)
                    if p is not None:
                        out.append(_branch_onto(ctx, p._copy(cursor=j), cand, head_dist))
    return out


class _Keyed:
    """Heap entry ordered like :func:`rank`."""

    __slots__ = ("key", "path")

    def __init__(self, path: PartialPath):
        self.key = (path.error, -path.cursor)
        self.path = path

    def __lt__(self, other: "_Keyed") -> bool:
        if self.key != other.key:
            return self.key < other.key
        return self.path.node_sequence < other.path.node_sequence


def _to_result(ctx: _Context, path: PartialPath, best_effort: bool = False) -> PathResult:
    g = ctx.graph
    if path.complete:
        end = path.end_distance
        consumed = ctx.idx.n
    else:
        end = path.position_at(ctx.idx.cum, min(path.cursor, ctx.idx.n - 1))
        consumed = path.cursor
    chain = path.nodes.to_list()
    # keep nodes up to the end of the segment holding the endpoint
    keep = len(chain)
    for k in range(1, len(chain)):
        if chain[k][1] >= end - 1e-9:
            keep = k + 1
            break
    chain = chain[:keep]
    if len(chain) == 1:
        endpoint = g.nodes[chain[0][0]]
    else:
        (a, da), (b, db) = chain[-2], chain[-1]
        frac = (end - da) / (db - da) if db > da else 1.0
        endpoint = interpolate(g.nodes[a], g.nodes[b], frac)
    return PathResult(tuple(n for n, _ in chain), endpoint, path.error, tuple(path.landmarks),
                      consumed, end, best_effort)


def snap_start(graph: RoadGraph, start: GeoPoint, radius: float) -> int:
    node, dist = graph.nearest_node(start)
    if dist > radius:
        raise SnapError(f"no graph node within {radius:.0f} m of start ({dist:.0f} m to nearest)")
    return node


def search(graph: RoadGraph, trace: SpeedTrace, start: GeoPoint | int,
           config: PathingConfig = PathingConfig()) -> SearchOutcome:
    """Run the best-first loop and report the ranked results with search statistics."""
    if len(trace) < 2:
        raise TraceError("pathing needs a trace with at least two samples")
    start_node = start if isinstance(start, int) else snap_start(graph, start, config.snap_radius)
    ctx = _Context(graph, trace, config)
    frontier: list[_Keyed] = [_Keyed(PartialPath.at_start(start_node))]
    complete: list[PartialPath] = []
    best_complete = math.inf
    expansions = 0
    exhausted = False
    most_advanced = frontier[0].path
    cap = config.max_partial_paths

    while frontier and (not complete or frontier[0].path.error < config.delta * best_complete):
        if expansions >= config.max_expansions:
            exhausted = True
            break
        current = heapq.heappop(frontier).path
        expansions += 1
        if (-current.cursor, current.error) < (-most_advanced.cursor, most_advanced.error):
            most_advanced = current
        for child in _goto_branch(ctx, current):
            if child.complete:
                complete.append(child)
                best_complete = min(best_complete, child.error)
            else:
                heapq.heappush(frontier, _Keyed(child))
        if len(frontier) > cap:
            frontier = heapq.nsmallest(cap, frontier)
            heapq.heapify(frontier)

    frontier_min = frontier[0].path.error if frontier else math.inf
    if complete:
        ranked = rank(complete)
        results = [_to_result(ctx, p) for p in ranked]
        if config.check_optimality and config.delta == 1.0 and not exhausted:
            assert results[0].error <= frontier_min + 1e-9, (
                f"best complete error {results[0].error} exceeds frontier minimum {frontier_min}")
    else:
        fallback = frontier[0].path if frontier else most_advanced
        results = [_to_result(ctx, fallback, best_effort=True)]
    return SearchOutcome(results, expansions, len(frontier), frontier_min, exhausted)


def elastic_path(graph: RoadGraph, trace: SpeedTrace, start: GeoPoint | int,
                 config: PathingConfig = PathingConfig()) -> list[PathResult]:
    """Ranked candidate routes (lowest error first) explaining ``trace`` from ``start``.

    When the search ends without any complete route the single returned
    result has ``best_effort=True`` and describes the most advanced partial
    route.
    """
    return search(graph, trace, start, config).results
