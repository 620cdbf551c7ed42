"""Speed traces: construction from GPS fixes, distance integration, stop and
hard-braking detection, resampling and CSV I/O."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geo import GeoPoint, haversine_distance, mph_to_mps, mps_to_mph

DEFAULT_V_STOP = 0.5
DEFAULT_SAMPLE_RATE_HZ = 2.0
HARD_BRAKE_MPS2 = mph_to_mps(8.0)  # 3.576 m/s^2
EXTREME_BRAKE_MPS2 = mph_to_mps(10.0)  # 4.470 m/s^2


class TraceError(ValueError):
    pass


class TraceSource(str, enum.Enum):
    OBD = "obd"
    GPS = "gps-derived"
    SYNTHETIC = "synthetic"


class BrakeSeverity(str, enum.Enum):
    HARD = "hard"
    EXTREME = "extreme"


@dataclass(frozen=True, slots=True)
class SpeedSample:
    t: float
    v: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t) and self.t >= 0):
            raise TraceError(f"bad timestamp {self.t}")
        if not (math.isfinite(self.v) and self.v >= 0):
            raise TraceError(f"bad speed {self.v}")


@dataclass(frozen=True, slots=True)
class GpsFix:
    t: float
    point: GeoPoint


@dataclass(frozen=True, slots=True)
class StopInterval:
    i_start: int
    i_end: int
    duration: float


@dataclass(frozen=True, slots=True)
class BrakingEvent:
    t: float
    decel: float
    severity: BrakeSeverity


@dataclass(frozen=True, eq=False)
class SpeedTrace:
    """Immutable (time, speed) series in seconds and m/s.

    ``t`` and ``v`` are read-only numpy arrays; ``cumdist[i]`` is the
    trapezoidal distance travelled from sample 0 to sample i.
    """

    t: np.ndarray
    v: np.ndarray
    source: TraceSource = TraceSource.OBD
    sample_rate_hz: float = field(default=0.0)
    cumdist: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        t = np.array(self.t, dtype=float)
        v = np.array(self.v, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise TraceError("time and speed arrays must be 1-d and equally long")
        if len(t) < 1:
            raise TraceError("a trace needs at least one sample")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise TraceError("trace contains non-finite values")
        if t[0] < 0 or np.any(v < 0):
            raise TraceError("timestamps and speeds must be non-negative")
        if np.any(np.diff(t) <= 0):
            raise TraceError("timestamps must be strictly increasing")
        rate = self.sample_rate_hz
        if not rate:
            rate = (len(t) - 1) / (t[-1] - t[0]) if len(t) > 1 else 1.0
        if rate <= 0:
            raise TraceError("sample rate must be positive")
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))))
        for arr in (t, v, cum):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "source", TraceSource(self.source))
        object.__setattr__(self, "sample_rate_hz", float(rate))
        object.__setattr__(self, "cumdist", cum)

    @classmethod
    def from_samples(cls, samples: Iterable[SpeedSample], source: TraceSource = TraceSource.OBD,
                     sample_rate_hz: float = 0.0) -> "SpeedTrace":
        samples = list(samples)
        return cls(np.array([s.t for s in samples]), np.array([s.v for s in samples]), source, sample_rate_hz)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> list[SpeedSample]:
        return [SpeedSample(float(a), float(b)) for a, b in zip(self.t, self.v)]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpeedTrace):
            return NotImplemented
        return (self.source == other.source and np.array_equal(self.t, other.t)
                and np.array_equal(self.v, other.v))

    def __hash__(self) -> int:
        return hash((self.source, len(self.t), self.t.tobytes(), self.v.tobytes()))


def gps_to_speed_trace(fixes: Sequence[GpsFix], *, closed: bool = True) -> SpeedTrace:
    """Speeds from consecutive fixes: haversine displacement over elapsed time.

    With ``closed=True`` (the default) each interval's mean speed is placed
    at the interval midpoint, and the first and last fix times carry the
    speed of their adjacent interval, so n fixes give n + 1 samples spanning
    the whole fix period. Integrating a constant-speed result recovers the
    haversine path length exactly.

    With ``closed=False`` n fixes give n - 1 samples, each interval's speed
    stamped at the interval's end. Integration then misses the first
    interval.
    """
    if len(fixes) < 2:
        raise TraceError("need at least two GPS fixes")
    mids, ends, vs = [], [], []
    for a, b in zip(fixes, fixes[1:]):
        dt = b.t - a.t
        if dt <= 0:
            raise TraceError(f"non-increasing GPS timestamps at t={b.t}")
        mids.append(0.5 * (a.t + b.t))
        ends.append(float(b.t))
        vs.append(haversine_distance(a.point, b.point) / dt)
    rate = 1.0 / float(np.median(np.diff([f.t for f in fixes])))
    if not closed:
        return SpeedTrace(np.array(ends), np.array(vs), TraceSource.GPS, rate)
    ts = [float(fixes[0].t), *mids, float(fixes[-1].t)]
    return SpeedTrace(np.array(ts), np.array([vs[0], *vs, vs[-1]]), TraceSource.GPS, rate)


def calculated_distance(trace: SpeedTrace, i0: int, i1: int) -> float:
    """Trapezoidal distance in meters between samples ``i0`` and ``i1``."""
    n = len(trace)
    if not (0 <= i0 <= i1 < n):
        raise IndexError(f"indices must satisfy 0 <= {i0} <= {i1} < {n}")
    return float(trace.cumdist[i1] - trace.cumdist[i0])


def detect_stops(trace: SpeedTrace, v_stop: float = DEFAULT_V_STOP) -> list[StopInterval]:
    """Maximal runs of samples slower than ``v_stop``, in time order."""
    if v_stop <= 0:
        raise ValueError("v_stop must be positive")
    slow = trace.v < v_stop
    out: list[StopInterval] = []
    i, n = 0, len(slow)
    while i < n:
        if not slow[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and slow[j + 1]:
            j += 1
        out.append(StopInterval(i, j, float(trace.t[j] - trace.t[i])))
        i = j + 1
    return out


def detect_braking_events(trace: SpeedTrace) -> list[BrakingEvent]:
    """Hard and extreme braking over one-second windows.

    The speed one second earlier is linearly interpolated, so the
    deceleration at sample i is v(t_i - 1) - v(t_i). Consecutive samples
    above the hard threshold form one event, reported at the sample with the
    largest deceleration.
    """
    if trace.duration < 1.0:
        raise TraceError("braking detection needs at least one second of trace")
    if trace.sample_rate_hz < 2.0 - 1e-9:
        raise TraceError("braking detection needs at least 2 samples per second")
    t, v = trace.t, trace.v
    start = np.searchsorted(t, t[0] + 1.0 - 1e-9)
    idx = np.arange(start, len(t))
    decel = np.interp(t[idx] - 1.0, t, v) - v[idx]
    events: list[BrakingEvent] = []
    k = 0
    eps = 1e-9
    while k < len(idx):
        if decel[k] <= HARD_BRAKE_MPS2 + eps:
            k += 1
            continue
        m = k
        while m + 1 < len(idx) and decel[m + 1] > HARD_BRAKE_MPS2 + eps:
            m += 1
        peak = k + int(np.argmax(decel[k:m + 1]))
        d = float(decel[peak])
        sev = BrakeSeverity.EXTREME if d > EXTREME_BRAKE_MPS2 + eps else BrakeSeverity.HARD
        events.append(BrakingEvent(float(t[idx[peak]]), d, sev))
        k = m + 1
    return events


def resample(trace: SpeedTrace, hz: float = DEFAULT_SAMPLE_RATE_HZ) -> SpeedTrace:
    """Linear interpolation onto a uniform grid from the first to the last timestamp."""
    if hz <= 0:
        raise ValueError("hz must be positive")
    t0, t1 = float(trace.t[0]), float(trace.t[-1])
    n = int(math.floor((t1 - t0) * hz + 1e-9)) + 1
    grid = t0 + np.arange(n) / hz
    if t1 - grid[-1] > 1e-9:
        grid = np.append(grid, t1)
    else:
        grid[-1] = t1
    if len(grid) < 2:
        grid = np.array([t0, t1])
    return SpeedTrace(grid, np.interp(grid, trace.t, trace.v), trace.source, hz)


# -- CSV -------------------------------------------------------------------

def write_trace_csv(trace: SpeedTrace, path: str | Path | None = None, *, mph: bool = False,
                    header_comment: str | None = None) -> str:
    """Write ``t_seconds,speed_mps`` (or ``speed_mph``). Returns the CSV text."""
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_seconds", "speed_mph" if mph else "speed_mps"])
    for t, v in zip(trace.t, trace.v):
        w.writerow([repr(float(t)), repr(float(mps_to_mph(v) if mph else v))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_trace_csv(path: str | Path, *, mph: bool = False) -> SpeedTrace:
    """Read either CSV trace form.

    ``t_seconds,speed_mps`` (or ``speed_mph``) is taken as an OBD trace;
    ``t_seconds,lat,lon`` is converted through :func:`gps_to_speed_trace`.
    Lines starting with ``#`` are comments.
    """
    text = Path(path).read_text(encoding="utf-8")
    rows = [r for r in csv.reader(line for line in text.splitlines() if line.strip() and not line.startswith("#"))]
    if not rows:
        raise TraceError(f"{path}: empty trace file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise TraceError(f"{path}: no samples")
    try:
        if header[:3] == ["t_seconds", "lat", "lon"]:
            fixes = [GpsFix(float(r[0]), GeoPoint(float(r[1]), float(r[2]))) for r in body]
            return gps_to_speed_trace(fixes)
        if header[:2] == ["t_seconds", "speed_mps"]:
            scale = mph_to_mps(1.0) if mph else 1.0
        elif header[:2] == ["t_seconds", "speed_mph"]:
            scale = mph_to_mps(1.0)
        else:
            raise TraceError(f"{path}: unrecognised header {header}")
        t = np.array([float(r[0]) for r in body])
        v = np.array([float(r[1]) for r in body]) * scale
    except (IndexError, ValueError) as exc:
        if isinstance(exc, TraceError):
            raise
        raise TraceError(f"{path}: malformed row ({exc})") from exc
    return SpeedTrace(t, v, TraceSource.OBD)
