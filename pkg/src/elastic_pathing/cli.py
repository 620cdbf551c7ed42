"""Command line interface: ``elastic-pathing <verb> ...``.

Verbs: ``map-build``, ``path``, ``synth``, ``eval``, ``count-paths``.

Exit codes:

    0  success
    1  other failure
    2  missing input file (or bad usage)
    3  malformed OSM XML or graph file
    4  start location cannot be snapped to the graph
    5  empty or unusable trace
    6  result and ground-truth trip ids do not match
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__
from .eval import (EvaluationError, cdf_csv, cluster_endpoints, clusters_geojson, error_cdf, evaluate,
                   evaluations_csv, paths_geojson, quartile_comparison, summarize, write_json)
from .geo import GeoPoint
from .graph import (FORMAT_MAGIC, GraphError, GraphFormatError, OsmParseError, RoadGraph, count_paths,
                    graph_from_osm, load_graph, parse_osm, build_graph, save_graph)
from .pathing import PathingConfig, SnapError, search, snap_start
from .synth import DriverProfile, generate_suite, read_truth, write_trip
from .trace import TraceError, read_trace_csv

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING = 2
EXIT_MALFORMED = 3
EXIT_UNSNAPPABLE = 4
EXIT_EMPTY_TRACE = 5
EXIT_MISMATCH = 6

TOOL = f"elastic-pathing {__version__}"
log = logging.getLogger("elastic_pathing")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- helpers -----------------------------------------------------------------------

def _require(path: str | Path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such file: {p}", EXIT_MISSING)
    return p


def _latlon(text: str) -> GeoPoint:
    try:
        lat, lon = (float(x) for x in text.split(","))
        return GeoPoint(lat, lon)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected LAT,LON, got {text!r}") from exc


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(_require(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value", EXIT_FAILURE)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def pathing_config(overrides: dict[str, str | float | int | bool | None]) -> PathingConfig:
    """PathingConfig from string or typed overrides; unknown keys are an error."""
    fields = {f.name: f for f in dataclasses.fields(PathingConfig)}
    kwargs = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in fields:
            raise CliError(f"unknown pathing option {key!r}", EXIT_FAILURE)
        default = getattr(PathingConfig(), key)
        if isinstance(value, str):
            if isinstance(default, bool):
                value = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                value = int(value)
            elif value.lower() == "none":
                value = None
            else:
                value = float(value)
        kwargs[key] = value
    try:
        return PathingConfig(**kwargs)
    except ValueError as exc:
        raise CliError(f"invalid pathing configuration: {exc}", EXIT_FAILURE) from exc


def _config_header(verb: str, settings: dict) -> str:
    body = " ".join(f"{k}={settings[k]}" for k in sorted(settings))
    return f"{TOOL} {verb}\nconfig: {body}"


def open_graph(path: str | Path) -> RoadGraph:
    """Load an EPGRAPH1 file, or build the graph from OSM XML."""
    p = _require(path)
    try:
        with p.open("rb") as fh:
            magic = fh.read(len(FORMAT_MAGIC))
        if magic == FORMAT_MAGIC:
            return load_graph(p)
        return graph_from_osm(p)
    except (OsmParseError, GraphFormatError) as exc:
        raise CliError(str(exc), EXIT_MALFORMED) from exc


def _write_csv(path: Path, header: str, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _read_csv_rows(path: Path) -> list[dict[str, str]]:
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(lines))


# -- map-build -------------------------------------------------------------------------

def cmd_map_build(args: argparse.Namespace) -> int:
    src = _require(args.osm)
    try:
        parsed = parse_osm(src)
        graph = build_graph(parsed.nodes, parsed.ways, parsed.restrictions)
    except OsmParseError as exc:
        raise CliError(str(exc), EXIT_MALFORMED) from exc
    save_graph(graph, args.out)
    print(f"nodes={len(graph.nodes)} ways={len(graph.ways)} restrictions={len(parsed.restrictions)} "
          f"intersections={len(graph.intersections)} -> {args.out}")
    return EXIT_OK


# -- path ----------------------------------------------------------------------------------

_worker_graph: RoadGraph | None = None


def _init_worker(graph_path: str) -> None:
    global _worker_graph
    _worker_graph = open_graph(graph_path)


def _start_for(trace_path: Path, start: GeoPoint | None) -> GeoPoint:
    if start is not None:
        return start
    sidecar = trace_path.with_name(trace_path.stem + ".truth.json")
    if sidecar.exists():
        s = read_truth(sidecar)["start"]
        return GeoPoint(float(s["lat"]), float(s["lon"]))
    raise CliError(f"{trace_path}: no --start given and no {sidecar.name} sidecar", EXIT_MISSING)


def _path_one(graph: RoadGraph, trace_path: Path, start: GeoPoint | None, config: PathingConfig,
              top: int, out_dir: Path, header: str) -> list:
    trace = read_trace_csv(trace_path)
    if len(trace) < 2:
        raise TraceError(f"{trace_path}: trace needs at least two samples")
    origin = _start_for(trace_path, start)
    t0 = time.perf_counter()
    outcome = search(graph, trace, origin, config)
    elapsed = time.perf_counter() - t0
    results = outcome.results[:top]
    trip_id = trace_path.stem
    write_json(paths_geojson(results, graph, {"generator": header, "trip_id": trip_id}),
               out_dir / f"{trip_id}.paths.geojson")
    best = results[0]
    return [trip_id, f"{best.endpoint.lat:.7f}", f"{best.endpoint.lon:.7f}", f"{best.error:.6f}",
            int(best.best_effort), f"{best.route_length:.3f}", outcome.expansions, f"{elapsed:.4f}"]


def _path_task(task: tuple) -> tuple[str, list | None, str | None, int]:
    trace_path, start, config, top, out_dir, header = task
    try:
        return str(trace_path), _path_one(_worker_graph, trace_path, start, config, top, out_dir, header), None, 0
    except CliError as exc:
        return str(trace_path), None, str(exc), exc.code
    except SnapError as exc:
        return str(trace_path), None, str(exc), EXIT_UNSNAPPABLE
    except TraceError as exc:
        return str(trace_path), None, str(exc), EXIT_EMPTY_TRACE


SUMMARY_COLUMNS = ["trip_id", "end_lat", "end_lon", "error", "best_effort", "route_length_m",
                   "expansions", "runtime_s"]


def cmd_path(args: argparse.Namespace, config: PathingConfig) -> int:
    traces: list[Path] = []
    for t in args.traces:
        p = _require(t)
        traces.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    graph = open_graph(args.graph)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = {**dataclasses.asdict(config), "top": args.top}
    header = _config_header("path", settings)
    tasks = [(tp, args.start, config, args.top, out_dir, header) for tp in traces]

    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(args.jobs, initializer=_init_worker, initargs=(str(args.graph),)) as pool:
            outcomes = list(pool.map(_path_task, tasks))
    else:
        global _worker_graph
        _worker_graph = graph
        outcomes = [_path_task(t) for t in tasks]

    rows, code = [], EXIT_OK
    for name, row, err, err_code in outcomes:
        if err is not None:
            print(f"error: {err}", file=sys.stderr)
            code = code or err_code
            continue
        rows.append(row)
        print(f"{row[0]}: endpoint {row[1]},{row[2]} error {row[3]} ({row[7]} s)")
    _write_csv(out_dir / "summary.csv", header, SUMMARY_COLUMNS, rows)
    return code


# -- synth ------------------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace, config: PathingConfig) -> int:
    graph = open_graph(args.graph)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    profile = DriverProfile(noise_sigma=args.noise, rng_seed=args.seed,
                            stop_prob_at_intersection=args.stop_prob,
                            speed_compliance=args.speed_compliance)
    settings = {"n": args.n, "seed": args.seed, "noise": args.noise, "rate_hz": args.rate,
                "min_length_m": args.min_length, "max_length_m": args.max_length,
                "stop_prob": args.stop_prob, "speed_compliance": args.speed_compliance}
    header = _config_header("synth", settings)
    if args.n == 0:
        return EXIT_OK
    trips = generate_suite(graph, args.n, args.seed, profile, (args.min_length, args.max_length),
                           args.rate, config=config)
    for trip in trips:
        write_trip(trip, out, header)
    print(f"wrote {len(trips)} trips to {out}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class _Truth:
    endpoint: GeoPoint
    trip_length: float
    start: GeoPoint


@dataclasses.dataclass(frozen=True)
class _Predicted:
    endpoint: GeoPoint


def cmd_eval(args: argparse.Namespace) -> int:
    results_dir, truth_dir = _require(args.results), _require(args.truth)
    summary = _require(results_dir / "summary.csv") if results_dir.is_dir() else results_dir
    predicted, runtimes = {}, {}
    for row in _read_csv_rows(summary):
        predicted[row["trip_id"]] = _Predicted(GeoPoint(float(row["end_lat"]), float(row["end_lon"])))
        runtimes[row["trip_id"]] = float(row.get("runtime_s") or 0.0)
    truths = {}
    for f in sorted(truth_dir.glob("*.truth.json")):
        d = read_truth(f)
        tid = d.get("trip_id") or f.name[: -len(".truth.json")]
        truths[tid] = _Truth(GeoPoint(d["endpoint"]["lat"], d["endpoint"]["lon"]), float(d["trip_length_m"]),
                             GeoPoint(d["start"]["lat"], d["start"]["lon"]))
    try:
        evals = evaluate(predicted, truths, runtimes)
    except EvaluationError as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    settings = {"cluster_radius_m": args.cluster_radius, "min_count": args.min_count,
                "grid_m": args.grid, "mc_samples": args.mc_samples, "seed": args.seed}
    header = _config_header("eval", settings)
    if not evals:
        print("no trips to evaluate")
        return EXIT_OK
    evaluations_csv(evals, out / "evaluations.csv", header)
    cdf_csv(error_cdf(evals, args.grid), out / "cdf.csv", header)
    clusters = cluster_endpoints(evals, args.cluster_radius, args.min_count)
    write_json(clusters_geojson(clusters, {"generator": header}), out / "clusters.geojson")
    quart = quartile_comparison(evals, args.mc_samples, args.seed)
    _write_csv(out / "quartiles.csv", header, ["length_lo_m", "length_hi_m", "mean_error_m", "mean_baseline_m"],
               [[f"{a:.1f}", f"{b:.1f}", f"{c:.1f}", f"{d:.1f}"] for a, b, c, d in quart])
    s = summarize(evals)
    fr = " ".join(f"<= {int(m)} m: {v:.3f}" for m, v in s.within.items())
    print(f"trips={s.n} mean_error={s.mean_error:.1f} m median={s.median_error:.1f} m {fr} clusters={len(clusters)}")
    return EXIT_OK


# -- count-paths ---------------------------------------------------------------------------------

def cmd_count_paths(args: argparse.Namespace) -> int:
    graph = open_graph(args.graph)
    try:
        start = snap_start(graph, args.start, args.snap_radius)
    except SnapError as exc:
        raise CliError(str(exc), EXIT_UNSNAPPABLE) from exc
    hist = count_paths(graph, start, args.max_dist, args.bucket, args.cap)
    settings = {"start": f"{args.start.lat},{args.start.lon}", "max_dist_m": args.max_dist,
                "bucket_m": args.bucket, "cap": args.cap}
    rows = [[f"{d:.1f}", c] for d, c in zip(hist.distances, hist.counts)]
    header = _config_header("count-paths", settings) + f"\ntruncated={str(hist.truncated).lower()}"
    if args.out:
        _write_csv(Path(args.out), header, ["distance_m", "paths"], rows)
    for line in header.splitlines():
        print(f"# {line}")
    print("distance_m,paths")
    for d, c in rows:
        print(f"{d},{c}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elastic-pathing", description="Reconstruct driven routes from speed traces.")
    parser.add_argument("--version", action="version", version=TOOL)
    parser.add_argument("--config", help="flat key = value file with pathing options")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("map-build", help="OSM XML -> EPGRAPH1 graph file")
    p.add_argument("osm")
    p.add_argument("out")

    p = sub.add_parser("path", help="reconstruct routes for one or more traces")
    p.add_argument("graph", help="EPGRAPH1 file or OSM XML")
    p.add_argument("traces", nargs="+", help="trace CSV files or directories of them")
    p.add_argument("--start", type=_latlon, help="LAT,LON (default: the trace's .truth.json sidecar)")
    p.add_argument("--delta", type=float)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out", default="paths_out")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("synth", help="generate synthetic trips with ground truth")
    p.add_argument("graph")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--rate", type=float, default=2.0)
    p.add_argument("--min-length", type=float, default=1000.0)
    p.add_argument("--max-length", type=float, default=10000.0)
    p.add_argument("--stop-prob", type=float, default=0.4)
    p.add_argument("--speed-compliance", type=float, default=1.0)
    p.add_argument("--out", default="synth_out")

    p = sub.add_parser("eval", help="score path results against ground truth")
    p.add_argument("results", help="directory holding summary.csv (or the CSV itself)")
    p.add_argument("truth", help="directory of .truth.json sidecars")
    p.add_argument("--cluster-radius", type=float, default=500.0)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--grid", type=float, default=50.0)
    p.add_argument("--mc-samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="eval_out")

    p = sub.add_parser("count-paths", help="histogram of route choices by distance")
    p.add_argument("graph")
    p.add_argument("--start", type=_latlon, required=True)
    p.add_argument("--max-dist", type=float, default=2000.0)
    p.add_argument("--bucket", type=float, default=100.0)
    p.add_argument("--cap", type=int, default=10_000_000)
    p.add_argument("--snap-radius", type=float, default=50.0)
    p.add_argument("--out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("EP_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        overrides: dict = dict(read_config_file(args.config)) if args.config else {}
        if getattr(args, "delta", None) is not None:
            overrides["delta"] = args.delta
        config = pathing_config(overrides)
        if args.verb == "map-build":
            return cmd_map_build(args)
        if args.verb == "path":
            return cmd_path(args, config)
        if args.verb == "synth":
            return cmd_synth(args, config)
        if args.verb == "eval":
            return cmd_eval(args)
        return cmd_count_paths(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_TRACE
    except GraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
