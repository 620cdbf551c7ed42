"""Geodesic primitives: great-circle distance, bearings, turn angles and the
curve-speed limit used to decide whether a turn is physically possible."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0
GRAVITY = 9.81
# maximum road incline (superelevation) and side friction for dry pavement
SUPERELEVATION = 0.07
SIDE_FRICTION = 0.15
LANE_WIDTH_M = 3.7
SPEED_CAP_MPS = 70.0

MPH_TO_MPS = 0.44704
KM_TO_MILES = 0.62


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate: {self.lat}, {self.lon}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class GeoConstants:
    earth_radius: float = EARTH_RADIUS_M
    gravity: float = GRAVITY
    superelevation_e: float = SUPERELEVATION
    side_friction_f: float = SIDE_FRICTION
    lane_width: float = LANE_WIDTH_M
    speed_cap: float = SPEED_CAP_MPS

    def __post_init__(self) -> None:
        for name in ("earth_radius", "gravity", "superelevation_e", "side_friction_f", "lane_width", "speed_cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


DEFAULT_CONSTANTS = GeoConstants()


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float, radius: float = EARTH_RADIUS_M) -> float:
    """Great-circle distance in meters between two coordinates in degrees."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    a = min(1.0, max(0.0, a))
    c = 2.0 * math.atan2(math.sqrt(a), math.sqrt(1.0 - a))
    return radius * c


def haversine_distance(a: GeoPoint, b: GeoPoint, radius: float = EARTH_RADIUS_M) -> float:
    return haversine_m(a.lat, a.lon, b.lat, b.lon, radius)


def meters_to_miles(meters: float) -> float:
    return meters / 1000.0 * KM_TO_MILES


def mph_to_mps(mph: float) -> float:
    return mph * MPH_TO_MPS


def mps_to_mph(mps: float) -> float:
    return mps / MPH_TO_MPS


def bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Initial bearing from ``a`` to ``b``, degrees clockwise from north in [0, 360)."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dlam = math.radians(b.lon - a.lon)
    x = math.sin(dlam) * math.cos(phi2)
    y = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return math.degrees(math.atan2(x, y)) % 360.0


def turn_angle(prev: GeoPoint, at: GeoPoint, next: GeoPoint) -> float:
    """Heading change at ``at`` when driving prev -> at -> next.

    0 means straight on, 180 a full reversal. The arrival heading is the
    reverse of the bearing from ``at`` back to ``prev`` so both headings are
    measured at the same point.
    """
    if prev == at or at == next:
        raise ValueError("turn_angle needs distinct consecutive points")
    arrive = (bearing_deg(at, prev) + 180.0) % 360.0
    leave = bearing_deg(at, next)
    diff = abs(leave - arrive) % 360.0
    return 360.0 - diff if diff > 180.0 else diff


def turn_radius(angle: float, lanes: int, constants: GeoConstants = DEFAULT_CONSTANTS) -> float:
    """Effective turning radius in meters; infinite for a straight continuation."""
    half = math.radians(angle) / 2.0
    s = math.sin(half)
    if s <= 0.0:
        return math.inf
    return (lanes * constants.lane_width / 2.0) / s


def max_turn_speed(angle: float, lanes: int, constants: GeoConstants = DEFAULT_CONSTANTS) -> float:
    """Highest speed (m/s) at which a turn of ``angle`` degrees can be taken.

    Curve-speed relation v = sqrt(g r (e + f)) with the radius from
    :func:`turn_radius`, capped at ``constants.speed_cap``.
    """
    if not 0.0 <= angle <= 180.0:
        raise ValueError(f"angle must be in [0, 180], got {angle}")
    if lanes < 1:
        raise ValueError(f"lanes must be >= 1, got {lanes}")
    r = turn_radius(angle, lanes, constants)
    if math.isinf(r):
        return constants.speed_cap
    v = math.sqrt(constants.gravity * r * (constants.superelevation_e + constants.side_friction_f))
    return min(v, constants.speed_cap)


def interpolate(a: GeoPoint, b: GeoPoint, frac: float) -> GeoPoint:
    """Point a fraction ``frac`` of the way from ``a`` to ``b``.

    Linear in lat/lon, which is adequate over road-segment lengths.
    """
    frac = min(1.0, max(0.0, frac))
    return GeoPoint(a.lat + (b.lat - a.lat) * frac, a.lon + (b.lon - a.lon) * frac)


def destination(start: GeoPoint, bearing: float, distance: float, radius: float = EARTH_RADIUS_M) -> GeoPoint:
    """Point reached by travelling ``distance`` meters from ``start`` on ``bearing`` degrees."""
    delta = distance / radius
    theta = math.radians(bearing)
    phi1 = math.radians(start.lat)
    lam1 = math.radians(start.lon)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    phi2 = math.asin(max(-1.0, min(1.0, sin_phi2)))
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * sin_phi2,
    )
    lon = (math.degrees(lam2) + 540.0) % 360.0 - 180.0
    return GeoPoint(math.degrees(phi2), lon)
