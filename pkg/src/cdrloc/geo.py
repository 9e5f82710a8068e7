"""Coordinates, distances and planar geometry primitives.

All estimation work happens in a local equirectangular frame measured in
meters (x east, y north) centred on the dataset. Geographic coordinates are
only used at the edges: parsing, output and the haversine distances used by
map-matching and evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegeneratePolygon, InvalidGeometry, OutOfProjectionRange

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0
MAX_PROJECTION_RANGE_M = 500_000.0


class GeoPoint(NamedTuple):
    lat: float
    lon: float

    def validate(self) -> "GeoPoint":
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InvalidGeometry(f"non-finite coordinate {self!r}")
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise InvalidGeometry(f"coordinate out of range {self!r}")
        return self


class LocalPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Segment:
    a: LocalPoint
    b: LocalPoint

    def __post_init__(self):
        if self.a == self.b:
            raise InvalidGeometry("zero-length segment")

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)


def haversine(p: GeoPoint, q: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371 km."""
    return float(haversine_array(p.lat, p.lon, q.lat, q.lon))


def haversine_array(lat1, lon1, lat2, lon2):
    """Vectorised haversine; arguments broadcast like numpy arrays."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(h))


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection around ``origin``.

    Longitude is scaled by ``cos(origin.lat)``; the round trip is exact up to
    floating point, the planar distortion grows with distance from the origin
    and points further than 500 km are refused.
    """

    origin: GeoPoint
    meters_per_deg_lat: float = METERS_PER_DEG_LAT
    meters_per_deg_lon: float = float("nan")

    def __post_init__(self):
        self.origin.validate()
        if math.isnan(self.meters_per_deg_lon):
            object.__setattr__(
                self, "meters_per_deg_lon",
                self.meters_per_deg_lat * math.cos(math.radians(self.origin.lat)),
            )
        if self.meters_per_deg_lat <= 0 or self.meters_per_deg_lon <= 0:
            raise OutOfProjectionRange("projection origin too close to a pole")

    @classmethod
    def centered_on(cls, points: Sequence[GeoPoint]) -> "LocalProjection":
        if not points:
            raise ValueError("cannot centre a projection on zero points")
        lat = float(np.mean([p.lat for p in points]))
        lon = float(np.mean([p.lon for p in points]))
        return cls(GeoPoint(lat, lon))

    def to_local(self, p: GeoPoint) -> LocalPoint:
        if haversine(self.origin, p) > MAX_PROJECTION_RANGE_M:
            raise OutOfProjectionRange(
                f"{p!r} is more than {MAX_PROJECTION_RANGE_M / 1000:.0f} km from the projection origin"
            )
        return LocalPoint(
            (p.lon - self.origin.lon) * self.meters_per_deg_lon,
            (p.lat - self.origin.lat) * self.meters_per_deg_lat,
        )

    def from_local(self, p: LocalPoint) -> GeoPoint:
        return GeoPoint(
            self.origin.lat + p.y / self.meters_per_deg_lat,
            self.origin.lon + p.x / self.meters_per_deg_lon,
        )

    def to_local_array(self, lat, lon):
        """Project arrays of coordinates; returns an ``(n, 2)`` array."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        dist = haversine_array(self.origin.lat, self.origin.lon, lat, lon)
        if np.any(dist > MAX_PROJECTION_RANGE_M):
            raise OutOfProjectionRange("points beyond the projection range")
        x = (lon - self.origin.lon) * self.meters_per_deg_lon
        y = (lat - self.origin.lat) * self.meters_per_deg_lat
        return np.column_stack([x, y])

    def from_local_array(self, xy):
        """Inverse of :meth:`to_local_array`; returns ``(lat, lon)`` arrays."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        lat = self.origin.lat + xy[:, 1] / self.meters_per_deg_lat
        lon = self.origin.lon + xy[:, 0] / self.meters_per_deg_lon
        return lat, lon


def project_to_segment(p: LocalPoint, s: Segment) -> LocalPoint:
    """Closest point of ``s`` to ``p`` (orthogonal foot clamped to the ends)."""
    ax, ay = s.a
    dx, dy = s.b.x - ax, s.b.y - ay
    denom = dx * dx + dy * dy
    if denom == 0.0:            # length underflows when squared
        return LocalPoint(ax, ay)
    t = min(1.0, max(0.0, ((p.x - ax) * dx + (p.y - ay) * dy) / denom))
    return LocalPoint(ax + t * dx, ay + t * dy)


def point_segment_distance(p: LocalPoint, s: Segment) -> float:
    q = project_to_segment(p, s)
    return math.hypot(p.x - q.x, p.y - q.y)


def point_in_polygon(p: LocalPoint, poly: Sequence[LocalPoint], tol: float = 1e-9) -> bool:
    """Ray-casting containment test; points on the boundary count as inside.

    ``poly`` is an ordered vertex list, optionally closed (last == first).
    """
    verts = list(poly)
    if len(verts) > 1 and verts[0] == verts[-1]:
        verts = verts[:-1]
    if len(verts) < 3:
        raise DegeneratePolygon(f"polygon needs at least 3 vertices, got {len(verts)}")

    x, y = p
    inside = False
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        # boundary check
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        if seg2 > 0:
            t = min(1.0, max(0.0, ((x - x1) * dx + (y - y1) * dy) / seg2))
            if math.hypot(x - (x1 + t * dx), y - (y1 + t * dy)) <= tol:
                return True
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * dx / dy
            if x < x_cross:
                inside = not inside
    return inside
