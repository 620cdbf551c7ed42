"""Route and destination reconstruction from vehicle speed traces."""

__version__ = "0.1.0"

from .geo import GeoPoint, haversine_distance, max_turn_speed, turn_angle  # noqa: E402
from .graph import RoadGraph, adjacent_edges, build_graph, count_paths, graph_from_osm, load_graph, parse_osm, save_graph  # noqa: E402
from .pathing import PathingConfig, PathResult, elastic_path, search  # noqa: E402
from .trace import SpeedTrace, calculated_distance, detect_braking_events, detect_stops, read_trace_csv  # noqa: E402

__all__ = [
    "GeoPoint", "haversine_distance", "max_turn_speed", "turn_angle",
    "RoadGraph", "adjacent_edges", "build_graph", "count_paths", "graph_from_osm", "load_graph",
    "parse_osm", "save_graph",
    "PathingConfig", "PathResult", "elastic_path", "search",
    "SpeedTrace", "calculated_distance", "detect_braking_events", "detect_stops", "read_trace_csv",
]
