"""Parsing and writing of the CSV / GeoJSON interchange files.

Formats
-------
CDR CSV          ``imsi,imei,cell_id,timestamp,event``
Truth CSV        ``imsi,timestamp,lat,lon,label``
Observations CSV ``cell_id,lat,lon``
Coverage         GeoJSON FeatureCollection of Polygons with properties
                 ``cell_id``, ``antenna_lat``, ``antenna_lon``, ``azimuth``
Roads            GeoJSON FeatureCollection of LineStrings
Buildings        GeoJSON FeatureCollection of Polygons

GeoJSON coordinates are ``[lon, lat]`` (RFC 7946). Every reader accepts a
path, ``bytes``, ``str`` or an open file object.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import groupby
from typing import Iterable, Iterator, Sequence

import numpy as np

from .coverage import circle_around_polygon
from .errors import (
    DuplicateCellId,
    EmptyInput,
    InvalidGeometry,
    InvalidPolygon,
    MalformedRow,
    MissingProperty,
)
from .geo import GeoPoint, LocalPoint, LocalProjection
from .mapmatch import RoadNetwork

log = logging.getLogger(__name__)

CDR_HEADER = ("imsi", "imei", "cell_id", "timestamp", "event")
TRUTH_HEADER = ("imsi", "timestamp", "lat", "lon", "label")
OBSERVATION_HEADER = ("cell_id", "lat", "lon")


class EventKind(str, Enum):
    CALL = "CALL"
    SMS = "SMS"
    DATA = "DATA"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, text: str) -> "EventKind":
        try:
            return cls(text.strip().upper())
        except ValueError:
            return cls.OTHER


class Label(str, Enum):
    MOVE = "MOVE"
    STAY = "STAY"


@dataclass(frozen=True)
class CdrRecord:
    imsi: str
    imei: str
    cell_id: str
    timestamp: int
    event: EventKind = EventKind.OTHER


@dataclass(frozen=True)
class TruthFix:
    imsi: str
    timestamp: int
    location: GeoPoint
    label: Label


@dataclass(frozen=True)
class CoverageObservation:
    cell_id: str
    location: GeoPoint


@dataclass(frozen=True)
class CellCoverage:
    """One coverage area and its circular approximation.

    ``circle_center`` and ``base_radius`` are derived from the polygon at
    parse time; ``extension`` is the learned radius correction.
    """

    cell_id: str
    antenna: GeoPoint
    azimuth: float | None
    polygon: tuple[GeoPoint, ...]
    circle_center: LocalPoint
    base_radius: float
    extension: float = 0.0

    @property
    def effective_radius(self) -> float:
        return self.base_radius + self.extension

    def with_extension(self, extension: float) -> "CellCoverage":
        return replace(self, extension=float(extension))


class CoverageMap(Mapping):
    """Cells keyed by id, in file order, plus the shared local projection."""

    def __init__(self, cells: Iterable[CellCoverage], projection: LocalProjection):
        self._cells: dict[str, CellCoverage] = {}
        for c in cells:
            if c.cell_id in self._cells:
                raise DuplicateCellId(c.cell_id)
            self._cells[c.cell_id] = c
        self.projection = projection

    def __getitem__(self, key):
        return self._cells[key]

    def __iter__(self):
        return iter(self._cells)

    def __len__(self):
        return len(self._cells)

    def __repr__(self):
        return f"CoverageMap({len(self)} cells, origin={self.projection.origin})"

    def with_extensions(self, extensions: Mapping[str, float]) -> "CoverageMap":
        cells = [c.with_extension(extensions.get(k, 0.0)) for k, c in self._cells.items()]
        return CoverageMap(cells, self.projection)

    def without_extensions(self) -> "CoverageMap":
        return self.with_extensions({})


@dataclass(frozen=True)
class Trajectory:
    user: str
    events: tuple[tuple[int, str], ...]

    def __len__(self):
        return len(self.events)

    @property
    def timestamps(self) -> list[int]:
        return [t for t, _ in self.events]

    @property
    def cell_ids(self) -> list[str]:
        return [c for _, c in self.events]


@dataclass
class TrajectorySet:
    """Result of :func:`build_trajectories` with the bookkeeping counters."""

    trajectories: list[Trajectory]
    duplicates: int = 0
    unresolved: int = 0
    unresolved_cells: set[str] = field(default_factory=set)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def __len__(self):
        return len(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]


# ---------------------------------------------------------------- readers

def _read_text(source) -> str:
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, str):
        if "\n" not in source and os.path.exists(source):
            with open(source, "rb") as fh:
                data = fh.read()
        else:
            return source
    elif isinstance(source, os.PathLike):
        with open(source, "rb") as fh:
            data = fh.read()
    elif hasattr(source, "read"):
        data = source.read()
        if isinstance(data, str):
            return data
    else:
        raise TypeError(f"unsupported source type {type(source).__name__}")
    return data.decode("utf-8-sig")


def _csv_rows(source, header: Sequence[str]):
    text = _read_text(source)
    if not text.strip():
        raise EmptyInput("input is empty (no header)")
    reader = csv.reader(io.StringIO(text, newline=""))
    got = next(reader)
    if tuple(h.strip() for h in got) != tuple(header):
        raise MalformedRow(1, f"expected header {','.join(header)!r}, got {','.join(got)!r}")
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not v.strip() for v in row):
            continue
        if len(row) != len(header):
            raise MalformedRow(line_no, f"expected {len(header)} fields, got {len(row)}")
        yield line_no, [v.strip() for v in row]


def _parse_int(text: str, line_no: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(line_no, f"non-numeric {what}") from None
    if not value.is_integer():
        raise MalformedRow(line_no, f"non-integer {what}")
    return int(value)


def _parse_float(text: str, line_no: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(line_no, f"non-numeric {what}") from None
    if not math.isfinite(value):
        raise MalformedRow(line_no, f"non-finite {what}")
    return value


def _parse_geo(lat: str, lon: str, line_no: int) -> GeoPoint:
    p = GeoPoint(_parse_float(lat, line_no, "lat"), _parse_float(lon, line_no, "lon"))
    try:
        return p.validate()
    except InvalidGeometry as exc:
        raise MalformedRow(line_no, str(exc)) from None


def parse_cdr(source) -> list[CdrRecord]:
    records = []
    for line_no, (imsi, imei, cell_id, ts, event) in _csv_rows(source, CDR_HEADER):
        timestamp = _parse_int(ts, line_no, "timestamp")
        if timestamp <= 0:
            raise MalformedRow(line_no, "timestamp must be positive")
        if not imsi:
            raise MalformedRow(line_no, "empty imsi")
        if not cell_id:
            raise MalformedRow(line_no, "empty cell_id")
        records.append(CdrRecord(imsi, imei, cell_id, timestamp, EventKind.parse(event)))
    return records


def parse_truth(source) -> list[TruthFix]:
    fixes = []
    for line_no, (imsi, ts, lat, lon, label) in _csv_rows(source, TRUTH_HEADER):
        timestamp = _parse_int(ts, line_no, "timestamp")
        try:
            lab = Label(label.upper())
        except ValueError:
            raise MalformedRow(line_no, f"label must be MOVE or STAY, got {label!r}") from None
        fixes.append(TruthFix(imsi, timestamp, _parse_geo(lat, lon, line_no), lab))
    return fixes


def parse_observations(source) -> list[CoverageObservation]:
    return [
        CoverageObservation(cell_id, _parse_geo(lat, lon, line_no))
        for line_no, (cell_id, lat, lon) in _csv_rows(source, OBSERVATION_HEADER)
    ]


def _feature_collection(source) -> list[dict]:
    text = _read_text(source)
    if not text.strip():
        raise EmptyInput("input is empty")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidGeometry(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise InvalidGeometry("expected a GeoJSON FeatureCollection")
    return list(doc.get("features") or [])


def _ring(coords, what: str) -> list[GeoPoint]:
    try:
        pts = [GeoPoint(float(c[1]), float(c[0])).validate() for c in coords]
    except (TypeError, IndexError, ValueError) as exc:
        raise InvalidPolygon(f"{what}: bad coordinates ({exc})") from None
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts = pts[:-1]
    if len(set(pts)) < 3:
        raise InvalidPolygon(f"{what}: polygon needs at least 3 distinct vertices")
    return pts


def _polygon_ring(feature: dict, what: str) -> list[GeoPoint]:
    geom = feature.get("geometry") or {}
    if geom.get("type") != "Polygon" or not geom.get("coordinates"):
        raise InvalidPolygon(f"{what}: geometry must be a Polygon")
    return _ring(geom["coordinates"][0], what)


def parse_coverage(source, projection: LocalProjection | None = None,
                   shift_factor: float = 0.5) -> CoverageMap:
    """Read coverage polygons and derive each cell's enclosing circle.

    Without an explicit ``projection`` the frame is centred on the mean
    antenna position, so the same file always yields the same frame.
    """
    features = _feature_collection(source)
    raw = []
    seen = set()
    for k, feat in enumerate(features):
        props = feat.get("properties") or {}
        what = f"feature {k}"
        for key in ("cell_id", "antenna_lat", "antenna_lon", "azimuth"):
            if key not in props:
                raise MissingProperty(f"{what}: missing property {key!r}")
        cell_id = str(props["cell_id"])
        if cell_id in seen:
            raise DuplicateCellId(cell_id)
        seen.add(cell_id)
        try:
            antenna = GeoPoint(float(props["antenna_lat"]), float(props["antenna_lon"])).validate()
        except (TypeError, ValueError) as exc:
            raise InvalidGeometry(f"{what}: bad antenna position ({exc})") from None
        az = props["azimuth"]
        azimuth = None if az is None or az == "" else float(az) % 360.0
        raw.append((cell_id, antenna, azimuth, tuple(_polygon_ring(feat, what))))

    if projection is None:
        if not raw:
            raise EmptyInput("coverage file has no features")
        projection = LocalProjection.centered_on([r[1] for r in raw])

    cells = []
    for cell_id, antenna, azimuth, polygon in raw:
        ant = projection.to_local(antenna)
        poly = [projection.to_local(v) for v in polygon]
        center, radius = circle_around_polygon(ant, poly, azimuth, shift_factor)
        cells.append(CellCoverage(cell_id, antenna, azimuth, polygon, center, radius))
    return CoverageMap(cells, projection)


def parse_roads(source, projection: LocalProjection) -> RoadNetwork:
    """Decompose LineStrings into segments; zero-length pieces are dropped."""
    segments = []
    dropped = 0
    for k, feat in enumerate(_feature_collection(source)):
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "LineString":
            lines = [geom.get("coordinates")]
        elif gtype == "MultiLineString":
            lines = geom.get("coordinates")
        else:
            raise InvalidGeometry(f"feature {k}: expected LineString, got {gtype!r}")
        for line in lines or []:
            if not line or len(line) < 2:
                raise InvalidGeometry(f"feature {k}: LineString needs at least 2 positions")
            try:
                pts = [projection.to_local(GeoPoint(float(c[1]), float(c[0])).validate()) for c in line]
            except (TypeError, IndexError, ValueError) as exc:
                raise InvalidGeometry(f"feature {k}: bad coordinates ({exc})") from None
            for a, b in zip(pts, pts[1:]):
                if a == b:
                    dropped += 1
                    continue
                segments.append((a, b))
    if dropped:
        log.warning("dropped %d zero-length road segment(s)", dropped)
    net = RoadNetwork.from_pairs(segments)
    net.dropped_segments = dropped
    return net


def parse_buildings(source, projection: LocalProjection) -> np.ndarray:
    """Building centroids (vertex means) in the local frame, shape ``(n, 2)``."""
    centroids = []
    for k, feat in enumerate(_feature_collection(source)):
        ring = _polygon_ring(feat, f"feature {k}")
        xy = np.array([projection.to_local(p) for p in ring])
        centroids.append(xy.mean(axis=0))
    return np.array(centroids, dtype=float).reshape(-1, 2)


# ------------------------------------------------------------ trajectories

def build_trajectories(records: Sequence[CdrRecord],
                       cells: Mapping[str, object] | None = None) -> TrajectorySet:
    """Group records by IMSI and order them in time.

    Identical ``(timestamp, cell_id)`` pairs of one user collapse to one
    event; same-timestamp events on different cells stay in input order.
    When ``cells`` is given, events on unknown cells are dropped and counted.
    """
    result = TrajectorySet([])
    by_user: dict[str, list[CdrRecord]] = {}
    for r in records:
        if cells is not None and r.cell_id not in cells:
            result.unresolved += 1
            result.unresolved_cells.add(r.cell_id)
            continue
        by_user.setdefault(r.imsi, []).append(r)
    if result.unresolved:
        log.warning("dropped %d event(s) on %d unresolvable cell id(s)",
                    result.unresolved, len(result.unresolved_cells))

    for user in sorted(by_user):
        recs = sorted(by_user[user], key=lambda r: r.timestamp)
        events = []
        for _, group in groupby(recs, key=lambda r: r.timestamp):
            seen = set()
            for r in group:
                if r.cell_id in seen:
                    result.duplicates += 1
                    continue
                seen.add(r.cell_id)
                events.append((r.timestamp, r.cell_id))
        result.trajectories.append(Trajectory(user, tuple(events)))
    return result


# ----------------------------------------------------------------- writers

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def format_cdr(records: Iterable[CdrRecord]) -> str:
    return _csv_text(CDR_HEADER, ((r.imsi, r.imei, r.cell_id, r.timestamp, r.event.value)
                                  for r in records))


def format_truth(fixes: Iterable[TruthFix]) -> str:
    return _csv_text(TRUTH_HEADER, ((f.imsi, f.timestamp, _fmt(f.location.lat),
                                     _fmt(f.location.lon), f.label.value) for f in fixes))


def format_observations(observations: Iterable[CoverageObservation]) -> str:
    return _csv_text(OBSERVATION_HEADER, ((o.cell_id, _fmt(o.location.lat), _fmt(o.location.lon))
                                          for o in observations))


def _geojson(features) -> str:
    return json.dumps({"type": "FeatureCollection", "features": features},
                      separators=(",", ":")) + "\n"


def _closed_ring(points: Sequence[GeoPoint]) -> list[list[float]]:
    ring = [[float(p.lon), float(p.lat)] for p in points]
    return ring + [ring[0]]


def format_coverage(cells: Iterable[CellCoverage]) -> str:
    features = []
    for c in cells:
        features.append({
            "type": "Feature",
            "properties": {
                "cell_id": c.cell_id,
                "antenna_lat": float(c.antenna.lat),
                "antenna_lon": float(c.antenna.lon),
                "azimuth": None if c.azimuth is None else float(c.azimuth),
            },
            "geometry": {"type": "Polygon", "coordinates": [_closed_ring(c.polygon)]},
        })
    return _geojson(features)


def format_linestrings(lines: Iterable[Sequence[GeoPoint]], ids: Iterable | None = None) -> str:
    features = []
    lines = list(lines)
    ids = list(ids) if ids is not None else list(range(len(lines)))
    for line_id, line in zip(ids, lines):
        features.append({
            "type": "Feature",
            "properties": {"id": line_id},
            "geometry": {"type": "LineString",
                         "coordinates": [[float(p.lon), float(p.lat)] for p in line]},
        })
    return _geojson(features)


def format_polygons(polygons: Iterable[Sequence[GeoPoint]]) -> str:
    features = [{
        "type": "Feature",
        "properties": {"id": k},
        "geometry": {"type": "Polygon", "coordinates": [_closed_ring(poly)]},
    } for k, poly in enumerate(polygons)]
    return _geojson(features)


def write_text(path, text: str) -> None:
    """Write ``text`` as UTF-8 with LF line endings, creating parent dirs."""
    path = os.fspath(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
