import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from elastic_pathing.geo import max_turn_speed
from elastic_pathing.graph import GraphError, is_valid_walk
from elastic_pathing.pathing import PathingConfig
from elastic_pathing.synth import (DriverProfile, generate_suite, generate_trip, random_route, read_truth,
                                   route_length, simulate_speed, write_trip)
from elastic_pathing.trace import detect_stops

from conftest import grid_graph, make_graph

GRID = grid_graph(6, 120.0)
TOL = PathingConfig().tolerance(1)


def test_three_node_route():
    g = make_graph({1: (0, 0), 2: (100, 0), 3: (200, 0)}, [[1, 2, 3]])
    route = random_route(g, 1, 200.0, np.random.default_rng(0))
    assert route == [1, 2, 3]
    tr = simulate_speed(route, g, DriverProfile())
    assert tr.v[0] == 0.0 and tr.v[-1] == 0.0
    assert tr.cumdist[-1] == pytest.approx(200.0, rel=0.01)


def test_random_routes_are_valid_walks():
    rng = np.random.default_rng(1)
    for _ in range(100):
        start = int(sorted(GRID.nodes)[rng.integers(len(GRID.nodes))])
        route = random_route(GRID, start, float(rng.uniform(100, 2000)), rng)
        assert is_valid_walk(GRID, route)
        assert all(a != c for a, c in zip(route, route[2:]))  # never straight back


def test_route_length_on_real_extract(suburb):
    rng = np.random.default_rng(3)
    start = sorted(n for n in suburb.nodes if n in suburb.intersections)[0]
    route = random_route(suburb, start, 7482.0, rng)
    assert 0.85 * 7482.0 <= route_length(suburb, route) <= 1.15 * 7482.0


def test_random_route_rejects_bad_input():
    with pytest.raises(ValueError):
        random_route(GRID, 0, 0.0, np.random.default_rng(0))
    with pytest.raises(GraphError):
        random_route(GRID, 999, 100.0, np.random.default_rng(0))


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10_000), st.sampled_from([2.0, 4.0, 10.0]))
def test_clean_trace_closes_on_route_length(seed, hz):
    rng = np.random.default_rng(seed)
    trip = generate_trip(GRID, 22, float(rng.uniform(200, 2000)), DriverProfile(), rng, sample_rate_hz=hz)
    assert trip.trace.cumdist[-1] == pytest.approx(trip.trip_length, rel=0.01)
    assert np.all(trip.trace.v >= 0)
    assert np.allclose(np.diff(trip.trace.t), 1.0 / hz)


def test_right_angle_turn_respects_limit():
    # 200 m east then 200 m north: one 90 degree corner
    g = make_graph({1: (0, 0), 2: (200, 0), 3: (200, 200), 4: (400, 0), 5: (200, -200)},
                   [[1, 2, 4], [5, 2, 3]], maxspeed=50 / 3.6)
    tr = simulate_speed([1, 2, 3], g, DriverProfile(stop_prob_at_intersection=0.0))
    pos = tr.cumdist
    near = (pos >= 200 - TOL) & (pos <= 200 + TOL)
    assert near.any()
    assert tr.v[near].max() <= max_turn_speed(90.0, 1) + 1e-9
    assert tr.v.max() > 10.0  # it did get up to speed on the straights


def test_always_stop_gives_zero_run_at_each_intersection():
    rng = np.random.default_rng(4)
    route = random_route(GRID, 0, 1500.0, rng)
    inner = [n for n in route[1:-1] if n in GRID.intersections]
    tr, stops = simulate_speed(route, GRID, DriverProfile(stop_prob_at_intersection=1.0), rng=rng,
                               return_stops=True)
    assert list(stops) == inner
    runs = detect_stops(tr)
    # one run per intersection plus the final stop (and the start at rest)
    assert len(runs) == len(inner) + 2


def test_seeded_generation_is_deterministic():
    a = generate_suite(GRID, 5, seed=9, length_range=(300.0, 1500.0))
    b = generate_suite(GRID, 5, seed=9, length_range=(300.0, 1500.0))
    c = generate_suite(GRID, 5, seed=10, length_range=(300.0, 1500.0))
    assert [t.route for t in a] == [t.route for t in b]
    assert all(x.trace == y.trace for x, y in zip(a, b))
    assert [t.route for t in a] != [t.route for t in c]


def test_suite_lengths_in_range(suburb):
    trips = generate_suite(suburb, 8, seed=2)
    assert [t.trip_id for t in trips] == [f"trip{k:03d}" for k in range(8)]
    assert all(1000.0 <= t.trip_length <= 10000.0 for t in trips)


def test_noise_is_multiplicative_and_non_negative():
    rng = np.random.default_rng(5)
    route = random_route(GRID, 0, 1000.0, rng)
    clean = simulate_speed(route, GRID, DriverProfile(rng_seed=1))
    noisy = simulate_speed(route, GRID, DriverProfile(noise_sigma=0.1, rng_seed=1))
    assert len(clean) == len(noisy)
    assert np.all(noisy.v >= 0)
    assert np.array_equal(noisy.v == 0, clean.v == 0)
    assert not np.array_equal(clean.v, noisy.v)


def test_profile_validation():
    with pytest.raises(ValueError):
        DriverProfile(accel=0.0)
    with pytest.raises(ValueError):
        DriverProfile(stop_prob_at_intersection=1.5)
    with pytest.raises(ValueError):
        simulate_speed([0, 1], GRID, sample_rate_hz=1.0)


def test_write_and_read_trip(tmp_path):
    trip = generate_suite(GRID, 1, seed=0, length_range=(300.0, 1500.0))[0]
    csv_path, json_path = write_trip(trip, tmp_path, header="test")
    truth = read_truth(json_path)
    assert truth["trip_id"] == "trip000"
    assert truth["route"] == list(trip.route)
    assert truth["trip_length_m"] == pytest.approx(trip.trip_length)
    assert csv_path.read_text().startswith("# test")
