"""Point-wise map-matching of position estimates onto road segments.

A point is matched by collecting the segments near it, projecting the point
orthogonally onto each (clamped to the segment), and keeping the candidate
with the smallest haversine distance. Segments are looked up through a
uniform grid over the local frame.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .geo import LocalPoint, LocalProjection, Segment, haversine_array


class MatchStatus(str, Enum):
    MATCHED = "MATCHED"
    UNMATCHED = "UNMATCHED"


class Policy(str, Enum):
    EXPAND = "EXPAND"
    STRICT = "STRICT"


@dataclass
class MatchConfig:
    radius: float = 2000.0
    policy: str = "EXPAND"
    max_doublings: int = 4
    segment_distance_query: bool = False
    match_stay_buildings: bool = False


class RoadNetwork:
    """Road segments in the local frame with a uniform-grid radius index.

    Each segment is registered in every grid cell its bounding box touches,
    which makes the index a superset filter for both the endpoint predicate
    and the true point-to-segment distance predicate.
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, cell_size: float = 500.0):
        self.a = np.asarray(a, dtype=float).reshape(-1, 2)
        self.b = np.asarray(b, dtype=float).reshape(-1, 2)
        if self.a.shape != self.b.shape:
            raise ValueError("endpoint arrays differ in shape")
        if np.any(np.all(self.a == self.b, axis=1)):
            raise ValueError("zero-length segment in road network")
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = float(cell_size)
        self.dropped_segments = 0
        self._grid: dict[tuple[int, int], list[int]] = defaultdict(list)
        lo = np.floor(np.minimum(self.a, self.b) / self.cell_size).astype(int)
        hi = np.floor(np.maximum(self.a, self.b) / self.cell_size).astype(int)
        for k in range(len(self.a)):
            for i in range(lo[k, 0], hi[k, 0] + 1):
                for j in range(lo[k, 1], hi[k, 1] + 1):
                    self._grid[(i, j)].append(k)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Sequence[float], Sequence[float]]],
                   cell_size: float = 500.0) -> "RoadNetwork":
        pairs = list(pairs)
        a = np.array([p[0] for p in pairs], dtype=float).reshape(-1, 2)
        b = np.array([p[1] for p in pairs], dtype=float).reshape(-1, 2)
        return cls(a, b, cell_size)

    @classmethod
    def from_segments(cls, segments: Iterable[Segment], cell_size: float = 500.0) -> "RoadNetwork":
        return cls.from_pairs(((s.a, s.b) for s in segments), cell_size)

    def with_cell_size(self, cell_size: float) -> "RoadNetwork":
        net = RoadNetwork(self.a, self.b, cell_size)
        net.dropped_segments = self.dropped_segments
        return net

    def __len__(self):
        return len(self.a)

    def segment(self, k: int) -> Segment:
        return Segment(LocalPoint(*self.a[k]), LocalPoint(*self.b[k]))

    @property
    def segments(self) -> list[Segment]:
        return [self.segment(k) for k in range(len(self))]

    def _nearby(self, p, r) -> np.ndarray:
        cs = self.cell_size
        i0, i1 = math.floor((p[0] - r) / cs), math.floor((p[0] + r) / cs)
        j0, j1 = math.floor((p[1] - r) / cs), math.floor((p[1] + r) / cs)
        found = set()
        if (i1 - i0 + 1) * (j1 - j0 + 1) > 4 * len(self._grid):
            for (i, j), ids in self._grid.items():
                if i0 <= i <= i1 and j0 <= j <= j1:
                    found.update(ids)
        else:
            for i in range(i0, i1 + 1):
                for j in range(j0, j1 + 1):
                    ids = self._grid.get((i, j))
                    if ids:
                        found.update(ids)
        return np.array(sorted(found), dtype=np.intp)

    def segments_in_radius(self, p, r: float, segment_distance: bool = False) -> np.ndarray:
        """Sorted ids of segments near ``p``.

        By default a segment qualifies when one of its endpoints is within
        ``r`` (closed disc). With ``segment_distance=True`` the distance from
        ``p`` to the closest point of the segment is used instead.
        """
        if r <= 0:
            raise ValueError("search radius must be positive")
        if len(self) == 0:
            return np.zeros(0, dtype=np.intp)
        ids = self._nearby(p, r)
        if len(ids) == 0:
            return ids
        return ids[_radius_predicate(self.a[ids], self.b[ids], p, r, segment_distance)]


def _radius_predicate(a, b, p, r, segment_distance):
    p = np.asarray(p, dtype=float)
    if segment_distance:
        return np.hypot(*(project_many(p, a, b) - p).T) <= r
    return (np.hypot(*(a - p).T) <= r) | (np.hypot(*(b - p).T) <= r)


def project_many(p, a, b) -> np.ndarray:
    """Clamped orthogonal projections of ``p`` onto each segment ``a[k]b[k]``."""
    d = b - a
    num = np.einsum("ij,ij->i", np.asarray(p, dtype=float) - a, d)
    den = np.einsum("ij,ij->i", d, d)
    # squared lengths can underflow to 0; such segments project to a
    t = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    t = np.clip(t, 0.0, 1.0)
    return a + t[:, None] * d


def segments_in_radius_bruteforce(net: RoadNetwork, p, r: float,
                                  segment_distance: bool = False) -> np.ndarray:
    """Linear scan over every segment; the reference for the grid index."""
    if len(net) == 0:
        return np.zeros(0, dtype=np.intp)
    return np.flatnonzero(_radius_predicate(net.a, net.b, p, r, segment_distance))


@dataclass(frozen=True)
class MatchResult:
    point: LocalPoint
    matched: LocalPoint | None
    segment_id: int | str | None
    distance: float
    status: MatchStatus
    radius: float

    @property
    def is_matched(self) -> bool:
        return self.status is MatchStatus.MATCHED


def _unmatched(p, radius) -> MatchResult:
    return MatchResult(LocalPoint(*p), None, None, math.nan, MatchStatus.UNMATCHED, radius)


def _best_candidate(p, ids, cand, projection):
    lat0, lon0 = projection.from_local_array(np.asarray(p, dtype=float))
    lat, lon = projection.from_local_array(cand)
    dist = haversine_array(lat0[0], lon0[0], lat, lon)
    # ids are sorted ascending, so argmin breaks ties by smallest id
    k = int(np.argmin(dist))
    return ids[k], cand[k], float(dist[k])


def _radii(radius, policy, max_doublings):
    if radius <= 0:
        raise ValueError("search radius must be positive")
    yield radius
    if Policy(policy) is Policy.EXPAND:
        for n in range(1, max_doublings + 1):
            yield radius * 2 ** n


def match_point(net: RoadNetwork, p, r: float, projection: LocalProjection,
                policy: str = "EXPAND", max_doublings: int = 4,
                segment_distance: bool = False, brute_force: bool = False) -> MatchResult:
    """Snap ``p`` to the closest candidate projection among nearby segments.

    ``EXPAND`` doubles the radius up to ``max_doublings`` times while no
    segment qualifies; ``STRICT`` gives up after the first radius.
    """
    find = segments_in_radius_bruteforce if brute_force else RoadNetwork.segments_in_radius
    for radius in _radii(r, policy, max_doublings):
        ids = find(net, p, radius, segment_distance)
        if len(ids):
            cand = project_many(p, net.a[ids], net.b[ids])
            seg, c, dist = _best_candidate(p, ids, cand, projection)
            return MatchResult(LocalPoint(*map(float, p)), LocalPoint(float(c[0]), float(c[1])),
                               int(seg), dist, MatchStatus.MATCHED, radius)
    return _unmatched(p, r)


def match_building(centroids: np.ndarray, p, r: float, projection: LocalProjection,
                   policy: str = "EXPAND", max_doublings: int = 4) -> MatchResult:
    """Snap ``p`` to the nearest building centroid within the search radius."""
    centroids = np.asarray(centroids, dtype=float).reshape(-1, 2)
    if len(centroids) == 0:
        return _unmatched(p, r)
    planar = np.hypot(*(centroids - np.asarray(p, dtype=float)).T)
    for radius in _radii(r, policy, max_doublings):
        ids = np.flatnonzero(planar <= radius)
        if len(ids):
            k, c, dist = _best_candidate(p, ids, centroids[ids], projection)
            return MatchResult(LocalPoint(*map(float, p)), LocalPoint(float(c[0]), float(c[1])),
                               f"building:{k}", dist, MatchStatus.MATCHED, radius)
    return _unmatched(p, r)


def match_trajectory(points, labels, net: RoadNetwork, projection: LocalProjection,
                     config: MatchConfig | None = None, buildings=None) -> list[MatchResult]:
    """Match MOVE-labelled points to roads; STAY points pass through.

    With ``config.match_stay_buildings`` and building centroids supplied,
    STAY points are snapped to the nearest building instead.
    """
    cfg = config or MatchConfig()
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    labels = list(labels)
    if len(labels) != len(points):
        raise ValueError("points and labels differ in length")
    out = []
    for p, lab in zip(points, labels):
        lab = getattr(lab, "value", lab)
        if lab == "MOVE":
            out.append(match_point(net, p, cfg.radius, projection, cfg.policy,
                                   cfg.max_doublings, cfg.segment_distance_query))
        elif cfg.match_stay_buildings and buildings is not None:
            out.append(match_building(buildings, p, cfg.radius, projection,
                                      cfg.policy, cfg.max_doublings))
        else:
            out.append(_unmatched(p, cfg.radius))
    return out
