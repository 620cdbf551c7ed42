import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastic_pathing.geo import GeoPoint, destination, haversine_distance, mph_to_mps
from elastic_pathing.trace import (BrakeSeverity, GpsFix, SpeedSample, SpeedTrace, TraceError, TraceSource,
                                   calculated_distance, detect_braking_events, detect_stops, gps_to_speed_trace,
                                   read_trace_csv, resample, write_trace_csv)

from conftest import piecewise_trace

speeds = st.lists(st.floats(0.0, 40.0), min_size=2, max_size=60)


def test_trace_validation():
    with pytest.raises(TraceError):
        SpeedTrace([0, 1, 1], [1, 2, 3])
    with pytest.raises(TraceError):
        SpeedTrace([0, 1], [1, -2])
    with pytest.raises(TraceError):
        SpeedTrace([], [])
    with pytest.raises(TraceError):
        SpeedSample(0.0, float("inf"))


def test_trace_is_immutable():
    tr = SpeedTrace([0, 1], [1, 2])
    with pytest.raises(ValueError):
        tr.v[0] = 5.0


def test_from_samples_and_equality():
    tr = SpeedTrace.from_samples([SpeedSample(0, 1), SpeedSample(0.5, 2)], TraceSource.OBD)
    assert tr.sample_rate_hz == pytest.approx(2.0)
    assert tr == SpeedTrace([0, 0.5], [1, 2])
    assert hash(tr) == hash(SpeedTrace([0, 0.5], [1, 2]))


def test_constant_speed_distance():
    tr = SpeedTrace(np.arange(11.0), np.full(11, 10.0))
    assert calculated_distance(tr, 0, 10) == pytest.approx(100.0)
    assert calculated_distance(tr, 3, 3) == 0.0
    with pytest.raises(IndexError):
        calculated_distance(tr, 5, 2)


def test_linear_ramp_is_exact():
    # trapezoid rule is exact on piecewise-linear speed
    tr = piecewise_trace([(10.0, 0.0, 10.0)], hz=2.0)
    assert calculated_distance(tr, 0, len(tr) - 1) == pytest.approx(50.0)


@given(speeds, st.data())
def test_distance_additive(vs, data):
    tr = SpeedTrace(np.arange(len(vs)) * 0.5, vs)
    n = len(vs)
    i, j, k = sorted(data.draw(st.lists(st.integers(0, n - 1), min_size=3, max_size=3)))
    assert calculated_distance(tr, i, k) == pytest.approx(
        calculated_distance(tr, i, j) + calculated_distance(tr, j, k), abs=1e-9)
    assert calculated_distance(tr, i, k) >= 0.0


def test_gps_closure_constant_speed():
    start = GeoPoint(40.5, -74.4)
    fixes, pts = [], []
    for k in range(61):
        p = destination(start, 30.0, 12.0 * k)
        pts.append(p)
        fixes.append(GpsFix(float(k), p))
    tr = gps_to_speed_trace(fixes)
    assert tr.source is TraceSource.GPS
    assert len(tr) == 62
    assert np.allclose(tr.v, 12.0, rtol=1e-6)
    path = sum(haversine_distance(a, b) for a, b in zip(pts, pts[1:]))
    assert calculated_distance(tr, 0, len(tr) - 1) == pytest.approx(path, rel=1e-6)


def test_gps_closure_varying_speed():
    start = GeoPoint(51.0, 7.0)
    dist, fixes, pts = 0.0, [], []
    for k in range(121):
        dist += 8.0 + 4.0 * np.sin(k / 10.0)
        p = destination(start, 75.0, dist)
        pts.append(p)
        fixes.append(GpsFix(0.5 * k, p))
    tr = gps_to_speed_trace(fixes)
    path = sum(haversine_distance(a, b) for a, b in zip(pts, pts[1:]))
    assert calculated_distance(tr, 0, len(tr) - 1) == pytest.approx(path, rel=5e-3)


def test_gps_interval_form():
    a = GeoPoint(10.0, 20.0)
    b = destination(a, 90.0, 30.0)
    tr = gps_to_speed_trace([GpsFix(0.0, a), GpsFix(1.0, b)], closed=False)
    assert len(tr) == 1 and tr.v[0] == pytest.approx(30.0, abs=0.01) and tr.t[0] == 1.0
    still = gps_to_speed_trace([GpsFix(0.0, a), GpsFix(1.0, a)], closed=False)
    assert len(still) == 1 and still.v[0] == 0.0
    three = [GpsFix(0.0, a), GpsFix(1.0, b), GpsFix(2.0, destination(b, 90.0, 30.0))]
    assert len(gps_to_speed_trace(three, closed=False)) == 2
    assert np.allclose(gps_to_speed_trace(three).v, 30.0, atol=0.01)


def test_gps_rejects_bad_input():
    with pytest.raises(TraceError):
        gps_to_speed_trace([GpsFix(0.0, GeoPoint(0, 0))])
    with pytest.raises(TraceError):
        gps_to_speed_trace([GpsFix(1.0, GeoPoint(0, 0)), GpsFix(1.0, GeoPoint(0, 0.001))])


def test_detect_stops_runs():
    tr = SpeedTrace(np.arange(10.0), [5, 0.1, 0, 0, 6, 7, 0, 0.4, 8, 0])
    stops = detect_stops(tr)
    assert [(s.i_start, s.i_end) for s in stops] == [(1, 3), (6, 7), (9, 9)]
    assert stops[0].duration == pytest.approx(2.0)


@given(speeds)
def test_stops_are_maximal_and_disjoint(vs):
    tr = SpeedTrace(np.arange(len(vs)) * 0.5, vs)
    stops = detect_stops(tr)
    for s in stops:
        assert all(tr.v[k] < 0.5 for k in range(s.i_start, s.i_end + 1))
        assert s.i_start == 0 or tr.v[s.i_start - 1] >= 0.5
        assert s.i_end == len(tr) - 1 or tr.v[s.i_end + 1] >= 0.5
    for a, b in zip(stops, stops[1:]):
        assert a.i_end + 1 < b.i_start


def _ramp(mph_per_s: float):
    v0 = mph_to_mps(40.0)
    return piecewise_trace([(3.0, v0, v0), (1.0, v0, v0 - mph_to_mps(mph_per_s)),
                            (3.0, v0 - mph_to_mps(mph_per_s), v0 - mph_to_mps(mph_per_s))], hz=2.0)


def test_braking_thresholds():
    hard = detect_braking_events(_ramp(9.0))
    extreme = detect_braking_events(_ramp(11.0))
    assert [e.severity for e in hard] == [BrakeSeverity.HARD]
    assert [e.severity for e in extreme] == [BrakeSeverity.EXTREME]
    assert hard[0].decel == pytest.approx(mph_to_mps(9.0))
    assert detect_braking_events(_ramp(7.0)) == []


def test_braking_needs_two_hz():
    tr = SpeedTrace(np.arange(10.0), np.full(10, 5.0))
    with pytest.raises(TraceError):
        detect_braking_events(tr)


@settings(max_examples=40)
@given(speeds)
def test_braking_severity_exclusive(vs):
    tr = SpeedTrace(np.arange(len(vs)) * 0.5, vs)
    if tr.duration < 1.0:
        return
    for e in detect_braking_events(tr):
        assert e.decel > mph_to_mps(8.0)
        assert (e.severity is BrakeSeverity.EXTREME) == (e.decel > mph_to_mps(10.0))


def test_resample_uniform():
    tr = SpeedTrace([0.0, 1.0, 2.5, 4.0], [0.0, 2.0, 2.0, 5.0])
    r = resample(tr, 2.0)
    assert np.allclose(np.diff(r.t), 0.5)
    assert r.t[-1] == 4.0
    assert r.v[2] == pytest.approx(2.0)


def test_csv_round_trip(tmp_path):
    tr = piecewise_trace([(5.0, 0.0, 10.0), (5.0, 10.0, 0.0)])
    p = tmp_path / "t.csv"
    write_trace_csv(tr, p, header_comment="made by test")
    back = read_trace_csv(p)
    assert np.allclose(back.t, tr.t) and np.allclose(back.v, tr.v)
    write_trace_csv(tr, p, mph=True)
    assert np.allclose(read_trace_csv(p).v, tr.v)


def test_csv_gps_form(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("t_seconds,lat,lon\n0,0,0\n1,0,0.0001\n2,0,0.0002\n")
    tr = read_trace_csv(p)
    assert tr.source is TraceSource.GPS and len(tr) == 4


def test_csv_errors(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(TraceError):
        read_trace_csv(p)
    p.write_text("t_seconds,speed_mps\n0,abc\n")
    with pytest.raises(TraceError):
        read_trace_csv(p)
    p.write_text("time,speed\n0,1\n")
    with pytest.raises(TraceError):
        read_trace_csv(p)
