"""OpenStreetMap road graph: parsing, construction, turn rules, persistence
and path-count growth."""

from __future__ import annotations

import enum
import io
import json
import logging
import math
import re
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import BinaryIO, Iterable, Mapping, Sequence
from xml.parsers import expat

import numpy as np

from .geo import EARTH_RADIUS_M, GeoPoint, haversine_m, max_turn_speed, turn_angle

log = logging.getLogger(__name__)

# drivable highway classes; footway/cycleway/path etc. are skipped
DRIVABLE_CLASSES = (
    "motorway", "motorway_link", "trunk", "trunk_link", "primary", "primary_link",
    "secondary", "secondary_link", "tertiary", "tertiary_link", "unclassified",
    "residential", "living_street", "service", "road",
)

DEFAULT_LANES = {
    "motorway": 2, "trunk": 2, "primary": 2, "secondary": 2,
}

# km/h where the way carries no maxspeed tag
DEFAULT_MAXSPEED_KMH = {
    "motorway": 110, "motorway_link": 60, "trunk": 90, "trunk_link": 50,
    "primary": 70, "primary_link": 50, "secondary": 60, "secondary_link": 40,
    "tertiary": 50, "tertiary_link": 40, "unclassified": 40, "residential": 30,
    "living_street": 10, "service": 20, "road": 40,
}

KMH = 1000.0 / 3600.0
MPH = 0.44704

FORMAT_MAGIC = b"EPGRAPH1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHHQI")  # magic, version, flags, payload length, crc32


class GraphError(ValueError):
    pass


class OsmParseError(GraphError):
    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} at byte {byte_offset}")
        self.byte_offset = byte_offset


class GraphFormatError(GraphError):
    pass


class Oneway(str, enum.Enum):
    NO = "no"
    FORWARD = "forward"
    REVERSE = "reverse"


class RestrictionKind(str, enum.Enum):
    NO_TURN = "no_turn"
    ONLY_TURN = "only_turn"
    NO_U_TURN = "no_u_turn"


@dataclass(frozen=True, slots=True)
class OsmNode:
    id: int
    point: GeoPoint


@dataclass(frozen=True, slots=True)
class OsmWay:
    id: int
    node_ids: tuple[int, ...]
    highway_class: str
    maxspeed: float | None = None  # m/s
    lanes: int | None = None
    oneway: Oneway = Oneway.NO

    @property
    def lane_count(self) -> int:
        return self.lanes if self.lanes else DEFAULT_LANES.get(self.highway_class, 1)

    @property
    def speed_limit(self) -> float:
        if self.maxspeed:
            return self.maxspeed
        return DEFAULT_MAXSPEED_KMH.get(self.highway_class, 40) * KMH


@dataclass(frozen=True, slots=True)
class TurnRestriction:
    from_way: int
    via_node: int
    to_way: int
    kind: RestrictionKind


@dataclass(frozen=True, slots=True)
class ParsedOsm:
    nodes: dict[int, OsmNode]
    ways: list[OsmWay]
    restrictions: list[TurnRestriction]
    dropped: int = 0


@dataclass(frozen=True, slots=True)
class Edge:
    target: int
    way_id: int
    length: float
    highway_class: str
    speed_limit: float
    lanes: int


@dataclass(frozen=True, slots=True)
class Candidate:
    """One admissible continuation out of a node."""

    next: int
    angle: float
    max_speed: float
    edge: Edge


# -- parsing -----------------------------------------------------------------

def _parse_maxspeed(raw: str | None) -> float | None:
    if not raw:
        return None
    m = re.match(r"\s*([0-9]+(?:\.[0-9]+)?)\s*(mph|km/h|kmh|kph)?", raw)
    if not m:
        return None
    value = float(m.group(1))
    if value <= 0:
        return None
    return value * (MPH if m.group(2) == "mph" else KMH)


def _parse_lanes(raw: str | None) -> int | None:
    if not raw:
        return None
    try:
        n = int(float(raw.split(";")[0]))
    except ValueError:
        return None
    return n if n >= 1 else None


def _parse_oneway(tags: Mapping[str, str]) -> Oneway:
    raw = tags.get("oneway", "").strip().lower()
    if raw in ("yes", "true", "1"):
        return Oneway.FORWARD
    if raw in ("-1", "reverse"):
        return Oneway.REVERSE
    if raw in ("no", "false", "0"):
        return Oneway.NO
    if tags.get("junction") in ("roundabout", "circular") or tags.get("highway") == "motorway":
        return Oneway.FORWARD
    return Oneway.NO


def _restriction_kind(value: str) -> RestrictionKind | None:
    if value == "no_u_turn":
        return RestrictionKind.NO_U_TURN
    if value.startswith("no_"):
        return RestrictionKind.NO_TURN
    if value.startswith("only_"):
        return RestrictionKind.ONLY_TURN
    return None


def parse_osm(document: bytes | str | Path | BinaryIO,
              highway_classes: Iterable[str] = DRIVABLE_CLASSES) -> ParsedOsm:
    """Read the node / way / restriction-relation subset of an OSM 0.6 document.

    ``document`` may be raw bytes, a path or a binary file object. Ways whose
    ``highway`` tag is outside ``highway_classes`` are skipped; node
    references that do not resolve are dropped and counted in
    ``ParsedOsm.dropped``, as are restrictions pointing at missing ways.
    Malformed XML raises :class:`OsmParseError` carrying the byte offset.
    """
    if isinstance(document, (str, Path)):
        data = Path(document).read_bytes()
    elif isinstance(document, (bytes, bytearray)):
        data = bytes(document)
    else:
        data = document.read()
    classes = frozenset(highway_classes)

    raw_nodes: dict[int, OsmNode] = {}
    raw_ways: list[tuple[int, list[int], dict[str, str]]] = []
    raw_rels: list[tuple[int, list[tuple[str, int, str]], dict[str, str]]] = []
    stack: list[tuple[str, object]] = []
    dropped = 0

    def start(name: str, attrs: dict[str, str]) -> None:
        nonlocal dropped
        if name == "node":
            try:
                nid = int(attrs["id"])
                pt = GeoPoint(float(attrs["lat"]), float(attrs["lon"]))
            except (KeyError, ValueError):
                dropped += 1
                stack.append(("skip", None))
                return
            raw_nodes[nid] = OsmNode(nid, pt)
            stack.append(("node", None))
        elif name == "way":
            item = (int(attrs["id"]), [], {})
            raw_ways.append(item)
            stack.append(("way", item))
        elif name == "relation":
            item = (int(attrs["id"]), [], {})
            raw_rels.append(item)
            stack.append(("relation", item))
        elif name == "nd" and stack and stack[-1][0] == "way":
            stack[-1][1][1].append(int(attrs["ref"]))  # type: ignore[index]
            stack.append(("nd", None))
        elif name == "member" and stack and stack[-1][0] == "relation":
            stack[-1][1][1].append((attrs.get("type", ""), int(attrs["ref"]), attrs.get("role", "")))  # type: ignore[index]
            stack.append(("member", None))
        elif name == "tag" and stack and stack[-1][0] in ("way", "relation"):
            stack[-1][1][2][attrs.get("k", "")] = attrs.get("v", "")  # type: ignore[index]
            stack.append(("tag", None))
        else:
            stack.append((name, None))

    def end(name: str) -> None:
        stack.pop()

    parser = expat.ParserCreate()
    parser.StartElementHandler = start
    parser.EndElementHandler = end
    try:
        parser.Parse(data, True)
    except expat.ExpatError as exc:
        raise OsmParseError(f"malformed OSM XML: {expat.ErrorString(exc.code)}", parser.ErrorByteIndex) from exc
    except (KeyError, ValueError) as exc:
        raise OsmParseError(f"invalid OSM element ({exc})", parser.CurrentByteIndex) from exc

    ways: list[OsmWay] = []
    for wid, refs, tags in raw_ways:
        hw = tags.get("highway")
        if hw not in classes:
            continue
        resolved = [r for r in refs if r in raw_nodes]
        dropped += len(refs) - len(resolved)
        # collapse consecutive duplicates left behind by dropped refs
        clean = [r for i, r in enumerate(resolved) if i == 0 or r != resolved[i - 1]]
        if len(clean) < 2:
            dropped += 1
            continue
        ways.append(OsmWay(wid, tuple(clean), hw, _parse_maxspeed(tags.get("maxspeed")),
                           _parse_lanes(tags.get("lanes")), _parse_oneway(tags)))

    way_nodes = {w.id: set(w.node_ids) for w in ways}
    restrictions: list[TurnRestriction] = []
    for rid, members, tags in raw_rels:
        if tags.get("type") != "restriction":
            continue
        kind = _restriction_kind(tags.get("restriction", ""))
        frm = [ref for typ, ref, role in members if typ == "way" and role == "from"]
        to = [ref for typ, ref, role in members if typ == "way" and role == "to"]
        via = [ref for typ, ref, role in members if typ == "node" and role == "via"]
        if kind is None or len(frm) != 1 or len(to) != 1 or len(via) != 1:
            dropped += 1
            continue
        f, v, t = frm[0], via[0], to[0]
        if f not in way_nodes or t not in way_nodes or v not in way_nodes[f] or v not in way_nodes[t]:
            dropped += 1
            continue
        restrictions.append(TurnRestriction(f, v, t, kind))

    used = {n for w in ways for n in w.node_ids}
    nodes = {nid: raw_nodes[nid] for nid in sorted(used)}
    if dropped:
        log.warning("parse_osm: dropped %d unresolvable references", dropped)
    return ParsedOsm(nodes, ways, restrictions, dropped)


# -- graph -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RoadGraph:
    """Immutable adjacency structure over OSM nodes.

    ``adjacency[n]`` lists the directed edges leaving ``n``; oneway ways only
    contribute their permitted direction. ``restrictions`` is keyed by the
    via node.
    """

    nodes: Mapping[int, GeoPoint]
    ways: Mapping[int, OsmWay]
    adjacency: Mapping[int, tuple[Edge, ...]]
    restrictions: Mapping[int, tuple[TurnRestriction, ...]]
    intersections: frozenset[int]
    degree: Mapping[int, int]
    node_lanes: Mapping[int, int]
    _cache: dict = field(default_factory=dict, repr=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoadGraph):
            return NotImplemented
        return (dict(self.nodes) == dict(other.nodes)
                and dict(self.adjacency) == dict(other.adjacency)
                and dict(self.restrictions) == dict(other.restrictions)
                and dict(self.ways) == dict(other.ways))

    __hash__ = None  # type: ignore[assignment]

    def is_intersection(self, node: int) -> bool:
        return node in self.intersections

    def is_dead_end(self, node: int) -> bool:
        return self.degree.get(node, 0) == 1

    def edge(self, a: int, b: int) -> Edge:
        for e in self.adjacency.get(a, ()):
            if e.target == b:
                return e
        raise GraphError(f"no edge {a} -> {b}")

    def has_edge(self, a: int, b: int) -> bool:
        return any(e.target == b for e in self.adjacency.get(a, ()))

    def _coord_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        arrs = self._cache.get("coords")
        if arrs is None:
            ids = np.array(list(self.nodes.keys()), dtype=np.int64)
            lat = np.array([p.lat for p in self.nodes.values()])
            lon = np.array([p.lon for p in self.nodes.values()])
            arrs = (ids, lat, lon)
            self._cache["coords"] = arrs
        return arrs

    def nearest_node(self, point: GeoPoint) -> tuple[int, float]:
        """Closest graph node to ``point`` and its distance in meters."""
        ids, lat, lon = self._coord_arrays()
        phi1 = math.radians(point.lat)
        phi2 = np.radians(lat)
        a = (np.sin((phi2 - phi1) / 2) ** 2
             + math.cos(phi1) * np.cos(phi2) * np.sin(np.radians(lon - point.lon) / 2) ** 2)
        d = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0, 1)))
        k = int(np.argmin(d))
        return int(ids[k]), float(d[k])

    def bbox(self) -> tuple[float, float, float, float]:
        _, lat, lon = self._coord_arrays()
        return float(lat.min()), float(lon.min()), float(lat.max()), float(lon.max())


def build_graph(nodes: Mapping[int, OsmNode] | Iterable[OsmNode], ways: Iterable[OsmWay],
                restrictions: Iterable[TurnRestriction] = ()) -> RoadGraph:
    """Assemble a :class:`RoadGraph` from parsed OSM collections.

    A node is an intersection when it is shared by two or more ways or has
    three or more distinct neighbours. Parallel edges between the same pair
    of nodes keep the lowest way id.
    """
    if not isinstance(nodes, Mapping):
        nodes = {n.id: n for n in nodes}
    ways = sorted(ways, key=lambda w: w.id)
    if not nodes or not ways:
        raise GraphError("cannot build a graph from empty input")

    out: dict[int, dict[int, Edge]] = {}
    neighbours: dict[int, set[int]] = {}
    membership: dict[int, set[int]] = {}
    for w in ways:
        for nid in w.node_ids:
            if nid not in nodes:
                raise GraphError(f"way {w.id} references unknown node {nid}")
            membership.setdefault(nid, set()).add(w.id)
        for a, b in zip(w.node_ids, w.node_ids[1:]):
            if a == b:
                continue
            pa, pb = nodes[a].point, nodes[b].point
            length = haversine_m(pa.lat, pa.lon, pb.lat, pb.lon)
            neighbours.setdefault(a, set()).add(b)
            neighbours.setdefault(b, set()).add(a)
            if w.oneway is not Oneway.REVERSE:
                out.setdefault(a, {}).setdefault(b, Edge(b, w.id, length, w.highway_class, w.speed_limit, w.lane_count))
            if w.oneway is not Oneway.FORWARD:
                out.setdefault(b, {}).setdefault(a, Edge(a, w.id, length, w.highway_class, w.speed_limit, w.lane_count))

    used = sorted(membership)
    node_map = {nid: nodes[nid].point for nid in used}
    adjacency = {nid: tuple(sorted(out.get(nid, {}).values(), key=lambda e: e.target)) for nid in used}
    degree = {nid: len(neighbours.get(nid, ())) for nid in used}
    intersections = frozenset(n for n in used if len(membership[n]) >= 2 or degree[n] >= 3)
    way_map = {w.id: w for w in ways}
    lanes: dict[int, int] = {}
    for w in ways:
        for nid in w.node_ids:
            lanes[nid] = max(lanes.get(nid, 1), w.lane_count)

    by_via: dict[int, list[TurnRestriction]] = {}
    for r in restrictions:
        fw, tw = way_map.get(r.from_way), way_map.get(r.to_way)
        if fw is None or tw is None or r.via_node not in fw.node_ids or r.via_node not in tw.node_ids:
            log.warning("build_graph: ignoring unresolvable restriction %s", r)
            continue
        by_via.setdefault(r.via_node, []).append(r)

    return RoadGraph(
        nodes=MappingProxyType(node_map),
        ways=MappingProxyType(way_map),
        adjacency=MappingProxyType(adjacency),
        restrictions=MappingProxyType({k: tuple(v) for k, v in sorted(by_via.items())}),
        intersections=intersections,
        degree=MappingProxyType(degree),
        node_lanes=MappingProxyType(lanes),
    )


def graph_from_osm(document: bytes | str | Path | BinaryIO) -> RoadGraph:
    parsed = parse_osm(document)
    return build_graph(parsed.nodes, parsed.ways, parsed.restrictions)


def adjacent_edges(graph: RoadGraph, at: int, arrived_from: int | None = None) -> list[Candidate]:
    """Legal continuations out of ``at`` when arriving from ``arrived_from``.

    Oneway direction and turn restrictions are honoured. Turning straight
    back is only offered at dead ends. Each candidate carries the turn angle
    and the curve-speed limit for the outgoing road.
    """
    key = (at, arrived_from)
    cached = graph._cache.get(key)
    if cached is not None:
        return list(cached)
    if at not in graph.nodes:
        raise GraphError(f"unknown node {at}")
    edges = graph.adjacency[at]
    if arrived_from is None:
        result = [Candidate(e.target, 0.0, max_turn_speed(0.0, e.lanes), e) for e in edges]
        graph._cache[key] = tuple(result)
        return result

    if arrived_from not in graph.nodes or not graph.has_edge(arrived_from, at):
        raise GraphError(f"{arrived_from} -> {at} is not a traversable edge")
    from_way = graph.edge(arrived_from, at).way_id
    rules = [r for r in graph.restrictions.get(at, ()) if r.from_way == from_way]
    only = {r.to_way for r in rules if r.kind is RestrictionKind.ONLY_TURN}
    banned = {r.to_way for r in rules if r.kind is RestrictionKind.NO_TURN}
    no_u = {r.to_way for r in rules if r.kind is RestrictionKind.NO_U_TURN}

    dead_end = graph.degree[at] == 1
    prev_pt = graph.nodes[arrived_from]
    here = graph.nodes[at]
    result = []
    for e in edges:
        if e.target == arrived_from:
            if not dead_end or e.way_id in no_u:
                continue
        elif only and e.way_id not in only:
            continue
        elif e.way_id in banned:
            continue
        if e.target == arrived_from:
            angle = 180.0
        else:
            try:
                angle = turn_angle(prev_pt, here, graph.nodes[e.target])
            except ValueError:  # coincident coordinates
                angle = 0.0
        result.append(Candidate(e.target, angle, max_turn_speed(angle, e.lanes), e))
    graph._cache[key] = tuple(result)
    return result


def is_valid_walk(graph: RoadGraph, node_sequence: Sequence[int]) -> bool:
    """True when consecutive nodes follow :func:`adjacent_edges` transitions."""
    if not node_sequence or node_sequence[0] not in graph.nodes:
        return False
    prev = None
    for a, b in zip(node_sequence, node_sequence[1:]):
        if b not in {c.next for c in adjacent_edges(graph, a, prev)}:
            return False
        prev = a
    return True


# -- persistence -----------------------------------------------------------------

def _payload(graph: RoadGraph) -> dict:
    return {
        "nodes": [[nid, p.lat, p.lon] for nid, p in graph.nodes.items()],
        "ways": [[w.id, list(w.node_ids), w.highway_class, w.maxspeed, w.lanes, w.oneway.value]
                 for w in graph.ways.values()],
        "restrictions": [[r.from_way, r.via_node, r.to_way, r.kind.value]
                         for rs in graph.restrictions.values() for r in rs],
    }


def _write_container(payload: dict, path: str | Path) -> None:
    body = zlib.compress(json.dumps(payload, separators=(",", ":")).encode("utf-8"), 6)
    header = _HEADER.pack(FORMAT_MAGIC, FORMAT_VERSION, 0, len(body), zlib.crc32(body))
    Path(path).write_bytes(header + body)


def save_graph(graph: RoadGraph, path: str | Path) -> None:
    """Write ``graph`` as an EPGRAPH1 container.

    Layout (little endian): 8-byte magic ``EPGRAPH1``, uint16 format version,
    uint16 flags (0), uint64 payload length, uint32 CRC-32 of the payload,
    then the zlib-compressed UTF-8 JSON payload with ``nodes`` as
    ``[id, lat, lon]``, ``ways`` as ``[id, node_ids, highway, maxspeed_mps,
    lanes, oneway]`` and ``restrictions`` as ``[from_way, via_node, to_way,
    kind]``. Derived adjacency is rebuilt on load.
    """
    _write_container(_payload(graph), path)


def load_graph(path: str | Path) -> RoadGraph:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise GraphFormatError(f"{path}: truncated header")
    magic, version, _flags, length, crc = _HEADER.unpack_from(raw)
    if magic != FORMAT_MAGIC:
        raise GraphFormatError(f"{path}: not an EPGRAPH1 file")
    if version != FORMAT_VERSION:
        raise GraphFormatError(f"{path}: unsupported format version {version}")
    body = raw[_HEADER.size:]
    if len(body) != length:
        raise GraphFormatError(f"{path}: truncated payload ({len(body)} of {length} bytes)")
    if zlib.crc32(body) != crc:
        raise GraphFormatError(f"{path}: checksum mismatch")
    try:
        payload = json.loads(zlib.decompress(body))
    except (zlib.error, ValueError) as exc:
        raise GraphFormatError(f"{path}: corrupt payload") from exc
    nodes = {int(n): OsmNode(int(n), GeoPoint(lat, lon)) for n, lat, lon in payload["nodes"]}
    ways = [OsmWay(int(i), tuple(int(x) for x in ids), hw, ms, ln, Oneway(ow))
            for i, ids, hw, ms, ln, ow in payload["ways"]]
    restrictions = [TurnRestriction(int(f), int(v), int(t), RestrictionKind(k))
                    for f, v, t, k in payload["restrictions"]]
    return build_graph(nodes, ways, restrictions)


# -- path counting -------------------------------------------------------------

_MARK_RTOL = 1e-6  # keeps walks of exactly mark length from missing it on rounding


@dataclass(frozen=True)
class PathCountHistogram:
    distances: tuple[float, ...]
    counts: tuple[int, ...]
    truncated: bool
    enumerated: int


def count_paths(graph: RoadGraph, start: int, max_distance: float, bucket: float,
                cap: int = 10_000_000) -> PathCountHistogram:
    """Number of distinct routes out of ``start`` that reach each distance mark.

    Marks sit at ``bucket, 2*bucket, ... <= max_distance``. A route is a walk
    along :func:`adjacent_edges` moves that never reverses onto the edge it
    came from and never repeats a directed edge; routes that dead-end before
    a mark do not count towards it. Enumeration stops after ``cap`` walks
    and sets ``truncated``.
    """
    if start not in graph.nodes:
        raise GraphError(f"unknown node {start}")
    if bucket <= 0 or max_distance <= 0:
        raise ValueError("bucket and max_distance must be positive")
    n_marks = int(math.floor(max_distance / bucket + 1e-9))
    marks = [bucket * (k + 1) for k in range(n_marks)]
    counts = [0] * n_marks
    if not marks:
        return PathCountHistogram((), (), False, 0)
    limit = marks[-1]

    def moves(at: int, prev: int | None) -> list[Candidate]:
        return [c for c in adjacent_edges(graph, at, prev) if c.next != prev]

    used: set[tuple[int, int]] = set()
    enumerated = 0
    truncated = False
    # stack frames: (node, previous node, distance so far, iterator over moves)
    stack = [(start, None, 0.0, iter(moves(start, None)))]
    while stack:
        at, prev, dist, it = stack[-1]
        cand = next(it, None)
        if cand is None:
            stack.pop()
            if prev is not None:
                used.discard((prev, at))
            continue
        step = (at, cand.next)
        if step in used:
            continue
        enumerated += 1
        if enumerated > cap:
            truncated = True
            break
        new = dist + cand.edge.length
        for k, m in enumerate(marks):
            eps = _MARK_RTOL * m
            if dist < m - eps and m <= new + eps:
                counts[k] += 1
        if new < limit * (1.0 - _MARK_RTOL):
            used.add(step)
            stack.append((cand.next, at, new, iter(moves(cand.next, at))))
    return PathCountHistogram(tuple(marks), tuple(counts), truncated, min(enumerated, cap))
