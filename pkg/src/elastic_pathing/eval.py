"""Evaluation harness: endpoint error, its CDF, a random-guess baseline and
frequency clustering of endpoints."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geo import EARTH_RADIUS_M, GeoPoint, destination, haversine_distance
from .pathing import PathResult

ERROR_MARKS_M = (250.0, 500.0, 800.0)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class TripEvaluation:
    trip_id: str
    predicted_endpoint: GeoPoint
    true_endpoint: GeoPoint
    endpoint_error: float
    trip_length: float
    runtime: float = 0.0
    start: GeoPoint | None = None


@dataclass(frozen=True)
class Summary:
    n: int
    mean_error: float
    median_error: float
    within: dict[float, float]

    def fraction_within(self, meters: float) -> float:
        return self.within[meters]


@dataclass(frozen=True)
class BaselineEstimate:
    mean: float
    stderr: float


@dataclass(frozen=True)
class EndpointCluster:
    center: GeoPoint
    radius: float
    count: int
    members: tuple[str, ...]


def evaluate(results: Mapping[str, PathResult] | Iterable[tuple[PathResult, object]],
             truths: Mapping[str, object] | None = None,
             runtimes: Mapping[str, float] | None = None) -> list[TripEvaluation]:
    """Per-trip endpoint error.

    Accepts either a mapping ``trip_id -> PathResult`` together with a
    mapping ``trip_id -> GroundTruthTrip``, or an iterable of
    ``(PathResult, GroundTruthTrip)`` pairs (ids taken from the trips).
    Ground truth may be any object with ``endpoint``, ``trip_length`` and
    optionally ``start``/``trip_id``.
    """
    runtimes = runtimes or {}
    if truths is None:
        pairs = [(getattr(t, "trip_id", str(k)), r, t) for k, (r, t) in enumerate(results)]
    else:
        if not isinstance(results, Mapping):
            raise TypeError("results must be a mapping when truths are given separately")
        missing = sorted(set(results) ^ set(truths))
        if missing:
            raise EvaluationError(f"unmatched trip ids: {', '.join(map(str, missing))}")
        pairs = [(k, results[k], truths[k]) for k in sorted(results)]
    out = []
    for tid, res, truth in pairs:
        out.append(TripEvaluation(
            trip_id=str(tid),
            predicted_endpoint=res.endpoint,
            true_endpoint=truth.endpoint,
            endpoint_error=haversine_distance(res.endpoint, truth.endpoint),
            trip_length=float(truth.trip_length),
            runtime=float(runtimes.get(tid, 0.0)),
            start=getattr(truth, "start", None),
        ))
    return out


def summarize(evals: Sequence[TripEvaluation], marks: Sequence[float] = ERROR_MARKS_M) -> Summary:
    if not evals:
        raise EvaluationError("nothing to summarize")
    err = np.array([e.endpoint_error for e in evals])
    return Summary(len(err), float(err.mean()), float(np.median(err)),
                   {float(m): float(np.mean(err <= m)) for m in marks})


def error_cdf(evals: Sequence[TripEvaluation], grid: float = 50.0) -> list[tuple[float, float]]:
    """Empirical CDF of endpoint error sampled every ``grid`` meters.

    The grid runs from 0 up to the first multiple of ``grid`` at or above
    the largest error, so the last value is always 1.
    """
    if not evals:
        raise EvaluationError("error_cdf needs at least one evaluation")
    if grid <= 0:
        raise ValueError("grid must be positive")
    err = np.sort([e.endpoint_error for e in evals])
    top = math.ceil(err[-1] / grid - 1e-9) * grid
    points = np.arange(0.0, top + grid / 2, grid)
    frac = np.searchsorted(err, points + 1e-9, side="right") / len(err)
    return [(float(d), float(f)) for d, f in zip(points, frac)]


def guess_baseline(trip_length: float, true_endpoint: GeoPoint, start: GeoPoint,
                   mc_samples: int = 10_000, seed: int = 0, *, literal: bool = False) -> BaselineEstimate:
    """Expected error of guessing a uniform random point on the circle of
    radius ``trip_length`` around ``start``.

    By default the error is the guess's distance to ``true_endpoint``. With
    ``literal=True`` it is the guess's distance to the start, i.e. the
    radius itself.
    """
    if trip_length <= 0:
        raise ValueError("trip_length must be positive")
    if mc_samples < 2:
        raise ValueError("mc_samples must be at least 2")
    if literal:
        return BaselineEstimate(float(trip_length), 0.0)
    rng = np.random.default_rng(seed)
    bearings = rng.uniform(0.0, 360.0, mc_samples)
    # vectorised destination() on the sphere
    delta = trip_length / EARTH_RADIUS_M
    theta = np.radians(bearings)
    phi1, lam1 = math.radians(start.lat), math.radians(start.lon)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * np.cos(theta)
    phi2 = np.arcsin(np.clip(sin_phi2, -1.0, 1.0))
    lam2 = lam1 + np.arctan2(np.sin(theta) * math.sin(delta) * math.cos(phi1),
                             math.cos(delta) - math.sin(phi1) * sin_phi2)
    p2, t2 = math.radians(true_endpoint.lat), math.radians(true_endpoint.lon)
    a = np.sin((p2 - phi2) / 2) ** 2 + np.cos(phi2) * math.cos(p2) * np.sin((t2 - lam2) / 2) ** 2
    d = 2 * EARTH_RADIUS_M * np.arctan2(np.sqrt(np.clip(a, 0, 1)), np.sqrt(np.clip(1 - a, 0, 1)))
    return BaselineEstimate(float(d.mean()), float(d.std(ddof=1) / math.sqrt(mc_samples)))


def baseline_for(evals: Sequence[TripEvaluation], mc_samples: int = 10_000, seed: int = 0) -> list[float]:
    """Guess baseline for each evaluation (which must carry its start)."""
    out = []
    for k, e in enumerate(evals):
        if e.start is None:
            raise EvaluationError(f"trip {e.trip_id} has no start location")
        out.append(guess_baseline(e.trip_length, e.true_endpoint, e.start, mc_samples, seed + k).mean)
    return out


def quartile_comparison(evals: Sequence[TripEvaluation], mc_samples: int = 10_000,
                        seed: int = 0) -> list[tuple[float, float, float, float]]:
    """Mean error vs mean guess baseline per trip-length quartile.

    Rows are ``(length_lo, length_hi, mean_error, mean_baseline)``.
    """
    if not evals:
        raise EvaluationError("nothing to compare")
    lengths = np.array([e.trip_length for e in evals])
    errs = np.array([e.endpoint_error for e in evals])
    base = np.array(baseline_for(evals, mc_samples, seed))
    edges = np.quantile(lengths, [0.0, 0.25, 0.5, 0.75, 1.0])
    which = np.clip(np.searchsorted(edges, lengths, side="right") - 1, 0, 3)
    rows = []
    for q in range(4):
        m = which == q
        if not m.any():
            continue
        rows.append((float(edges[q]), float(edges[q + 1]), float(errs[m].mean()), float(base[m].mean())))
    return rows


def cluster_endpoints(points: Sequence[TripEvaluation] | Sequence[tuple[str, GeoPoint]],
                      radius: float = 500.0, min_count: int = 5) -> list[EndpointCluster]:
    """Greedy max-coverage clustering of endpoints.

    Candidate centers are the endpoints themselves. The center covering the
    most unassigned endpoints within ``radius`` is taken (earliest input on
    ties), its members removed, and the process repeats while a cluster of
    at least ``min_count`` remains.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    items = [(p.trip_id, p.predicted_endpoint) if isinstance(p, TripEvaluation) else (str(p[0]), p[1])
             for p in points]
    n = len(items)
    if n == 0:
        return []
    lat = np.radians([p.lat for _, p in items])
    lon = np.radians([p.lon for _, p in items])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    dist = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0, 1)))
    within = dist <= radius
    free = np.ones(n, dtype=bool)
    clusters = []
    while free.any():
        cover = (within & free[None, :]).sum(axis=1)
        cover[~free] = -1  # centers are drawn from unassigned endpoints
        best = int(np.argmax(cover))
        if cover[best] < max(min_count, 1):
            break
        members = np.flatnonzero(within[best] & free)
        free[members] = False
        clusters.append(EndpointCluster(items[best][1], float(radius), int(len(members)),
                                        tuple(items[k][0] for k in members)))
    return clusters


# -- output -----------------------------------------------------------------------

def evaluations_csv(evals: Sequence[TripEvaluation], path: str | Path | None = None,
                    header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trip_id", "pred_lat", "pred_lon", "true_lat", "true_lon",
                "endpoint_error_m", "trip_length_m", "runtime_s"])
    for e in evals:
        w.writerow([e.trip_id, e.predicted_endpoint.lat, e.predicted_endpoint.lon,
                    e.true_endpoint.lat, e.true_endpoint.lon,
                    f"{e.endpoint_error:.3f}", f"{e.trip_length:.3f}", f"{e.runtime:.4f}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def cdf_csv(cdf: Sequence[tuple[float, float]], path: str | Path | None = None,
            header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["distance_m", "cumulative_fraction"])
    for d, f in cdf:
        w.writerow([f"{d:.1f}", f"{f:.6f}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _circle(center: GeoPoint, radius: float, vertices: int = 48) -> list[list[float]]:
    ring = []
    for k in range(vertices):
        p = destination(center, 360.0 * k / vertices, radius)
        ring.append([p.lon, p.lat])
    ring.append(ring[0])
    return ring


def clusters_geojson(clusters: Sequence[EndpointCluster], properties: Mapping | None = None) -> dict:
    """Clusters as circle polygons, shaded by ``count`` in any GeoJSON viewer."""
    feats = []
    for c in clusters:
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [_circle(c.center, c.radius)]},
            "properties": {"count": c.count, "radius_m": c.radius, "members": list(c.members),
                           "center": [c.center.lon, c.center.lat]},
        })
    out = {"type": "FeatureCollection", "features": feats}
    if properties:
        out["properties"] = dict(properties)
    return out


def paths_geojson(results: Sequence[PathResult], graph, properties: Mapping | None = None) -> dict:
    """Ranked path results as LineStrings ending at each result's endpoint."""
    feats = []
    for rank_, r in enumerate(results, start=1):
        coords = [[graph.nodes[n].lon, graph.nodes[n].lat] for n in r.node_sequence[:-1]]
        if len(r.node_sequence) == 1:
            coords = [[graph.nodes[r.node_sequence[0]].lon, graph.nodes[r.node_sequence[0]].lat]]
        coords.append([r.endpoint.lon, r.endpoint.lat])
        if len(coords) == 1:
            coords.append(coords[0])
        feats.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coords},
            "properties": {"rank": rank_, "error": r.error, "route_length_m": r.route_length,
                           "best_effort": r.best_effort, "landmarks": len(r.landmarks),
                           "nodes": list(r.node_sequence)},
        })
    out = {"type": "FeatureCollection", "features": feats}
    if properties:
        out["properties"] = dict(properties)
    return out


def write_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


__all__ = [
    "ERROR_MARKS_M", "EvaluationError", "TripEvaluation", "Summary", "BaselineEstimate",
    "EndpointCluster", "evaluate", "summarize", "error_cdf", "guess_baseline", "baseline_for",
    "quartile_comparison", "cluster_endpoints", "evaluations_csv", "cdf_csv",
    "clusters_geojson", "paths_geojson", "write_json",
]
