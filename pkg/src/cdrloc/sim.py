"""Seeded synthetic worlds, annotated ground-truth tracks and sparse CDR.

The world is a hexagonal lattice of omnidirectional sites whose hexagons
play the role of the operator's coverage polygons, plus a jittered grid of
roads. Every cell also has a hidden radio reach that differs from its
hexagon, and the serving cell of an event is

    argmax_i  -|x - a_i| / reach_i + sigma * N(0, 1)

so devices are regularly served by a cell whose polygon does not contain
them. Users alternate between dwelling at a building next to the road grid
and driving along the roads to another of their places.

Randomness comes from one seed split into labelled substreams (world,
truth, cdr, observations) so each stage is reproducible on its own.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geo import GeoPoint, LocalProjection
from .ingest import (
    CdrRecord,
    CoverageMap,
    CoverageObservation,
    EventKind,
    Label,
    TruthFix,
    format_coverage,
    format_linestrings,
    format_polygons,
    parse_buildings,
    parse_coverage,
    parse_roads,
)
from .mapmatch import RoadNetwork

SQRT3 = math.sqrt(3.0)


@dataclass
class SimConfig:
    seed: int = 0
    n_cells: int = 49
    cell_pitch_m: float = 2000.0        # distance between neighbouring sites
    reach_sigma: float = 0.35           # log-std of hidden reach around the hexagon size
    selection_sigma: float = 0.35       # noise on the serving-cell score
    road_spacing_m: float = 1500.0
    road_jitter_m: float = 120.0
    n_users: int = 6
    n_places: int = 5
    duration_s: float = 48 * 3600.0
    dwell_mean_s: float = 4 * 3600.0
    dwell_shape: float = 3.0            # gamma shape of dwell durations
    leg_mean_s: float = 1.5 * 3600.0
    move_speed: tuple[float, float] = (6.0, 14.0)
    move_jitter_m: float = 5.0
    building_offset_m: tuple[float, float] = (250.0, 650.0)   # homes sit inside blocks
    event_rate_per_h: float = 2.0
    truth_interval_s: float = 30.0
    n_observations: int = 2000
    origin: tuple[float, float] = (58.38, 26.72)
    start_time: int = 1_700_000_000

    def validate(self) -> "SimConfig":
        positive = ("n_cells", "cell_pitch_m", "road_spacing_m", "n_users", "n_places",
                    "duration_s", "dwell_mean_s", "dwell_shape", "leg_mean_s", "truth_interval_s")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("reach_sigma", "selection_sigma", "road_jitter_m", "move_jitter_m",
                     "event_rate_per_h", "n_observations"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        lo, hi = self.move_speed
        if lo < 0 or hi < lo:
            raise ValueError("move_speed must be a range 0 <= lo <= hi")
        if self.start_time <= 0:
            raise ValueError("start_time must be positive")
        return self


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one purpose, derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(label.encode()),)))


# -------------------------------------------------------------------- world

@dataclass
class World:
    config: SimConfig
    frame: LocalProjection          # simulator frame, origin at the roaming-box centre
    sites: np.ndarray               # (n, 2) antenna positions, simulator frame
    reach: np.ndarray               # (n,) hidden serving reach, meters
    hexagons: list[np.ndarray]      # (6, 2) each
    cell_ids: list[str]
    box: tuple[float, float, float, float]     # xmin, xmax, ymin, ymax of the roaming area
    nodes: np.ndarray               # (ny, nx, 2) road grid nodes, may be empty
    road_lines: list[np.ndarray]
    buildings: list[np.ndarray] = field(default_factory=list)
    coverage_geojson: str = ""
    roads_geojson: str = ""
    buildings_geojson: str = ""
    cells: CoverageMap | None = None
    roads: RoadNetwork | None = None

    @property
    def extent_km(self) -> tuple[float, float]:
        xmin, xmax, ymin, ymax = self.box
        return (xmax - xmin) / 1000.0, (ymax - ymin) / 1000.0

    def to_geo(self, xy) -> list[GeoPoint]:
        lat, lon = self.frame.from_local_array(xy)
        return [GeoPoint(float(a), float(b)) for a, b in zip(lat, lon)]

    def serving_cells(self, xy, rng: np.random.Generator) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        d = np.hypot(xy[:, None, 0] - self.sites[None, :, 0], xy[:, None, 1] - self.sites[None, :, 1])
        score = -d / self.reach[None, :]
        if self.config.selection_sigma > 0:
            score = score + self.config.selection_sigma * rng.standard_normal(score.shape)
        return np.argmax(score, axis=1)

    def nearest_site(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        d = np.hypot(xy[:, None, 0] - self.sites[None, :, 0], xy[:, None, 1] - self.sites[None, :, 1])
        return np.argmin(d, axis=1)


def hex_lattice(n_cells: int, pitch: float):
    """Pointy-top hexagon centres (row-major, odd rows offset) and circumradius."""
    cols = math.ceil(math.sqrt(n_cells))
    rc = pitch / SQRT3
    centres = []
    k = 0
    row = 0
    while k < n_cells:
        for col in range(cols):
            if k == n_cells:
                break
            centres.append((col * pitch + (row % 2) * pitch / 2.0, row * 1.5 * rc))
            k += 1
        row += 1
    return np.array(centres), rc


def hexagon(centre, rc) -> np.ndarray:
    ang = np.radians(30.0 + 60.0 * np.arange(6))
    return np.column_stack([centre[0] + rc * np.cos(ang), centre[1] + rc * np.sin(ang)])


def _roaming_box(centres, rc):
    """Box covered by the lattice interior; for tiny lattices, a box inside one hexagon."""
    ys = np.unique(centres[:, 1])
    xmin = max(centres[centres[:, 1] == y, 0].min() for y in ys)
    xmax = min(centres[centres[:, 1] == y, 0].max() for y in ys)
    ymin, ymax = centres[:, 1].min(), centres[:, 1].max()
    inner = rc * SQRT3 / 2.0
    if xmax - xmin < inner:
        cx = 0.5 * (xmin + xmax)
        xmin, xmax = cx - inner / 2, cx + inner / 2
    if ymax - ymin < inner:
        cy = 0.5 * (ymin + ymax)
        ymin, ymax = cy - inner / 2, cy + inner / 2
    return xmin, xmax, ymin, ymax


def generate_world(config: SimConfig) -> World:
    cfg = config.validate()
    rng = substream(cfg.seed, "world")
    centres, rc = hex_lattice(cfg.n_cells, cfg.cell_pitch_m)
    xmin, xmax, ymin, ymax = _roaming_box(centres, rc)
    shift = np.array([(xmin + xmax) / 2.0, (ymin + ymax) / 2.0])
    centres = centres - shift
    box = (xmin - shift[0], xmax - shift[0], ymin - shift[1], ymax - shift[1])
    frame = LocalProjection(GeoPoint(*cfg.origin))

    reach = rc * np.exp(cfg.reach_sigma * rng.standard_normal(len(centres)))
    hexes = [hexagon(c, rc) for c in centres]
    cell_ids = [f"C{k + 1:03d}" for k in range(len(centres))]

    nx = int(math.floor((box[1] - box[0]) / cfg.road_spacing_m)) + 1
    ny = int(math.floor((box[3] - box[2]) / cfg.road_spacing_m)) + 1
    lines: list[np.ndarray] = []
    if nx >= 2 and ny >= 2:
        gx = box[0] + (box[1] - box[0] - (nx - 1) * cfg.road_spacing_m) / 2 + cfg.road_spacing_m * np.arange(nx)
        gy = box[2] + (box[3] - box[2] - (ny - 1) * cfg.road_spacing_m) / 2 + cfg.road_spacing_m * np.arange(ny)
        nodes = np.stack(np.meshgrid(gx, gy), axis=-1)
        nodes = nodes + rng.uniform(-cfg.road_jitter_m, cfg.road_jitter_m, nodes.shape)
        lines = [nodes[j, :, :] for j in range(ny)] + [nodes[:, i, :] for i in range(nx)]
    else:
        nodes = np.zeros((0, 0, 2))

    world = World(cfg, frame, centres, reach, hexes, cell_ids, box, nodes, lines)

    world.coverage_geojson = _coverage_geojson(world)
    world.roads_geojson = format_linestrings([world.to_geo(line) for line in lines])
    world.cells = parse_coverage(world.coverage_geojson)
    world.roads = parse_roads(world.roads_geojson, world.cells.projection)
    return world


def _coverage_geojson(world: World) -> str:
    from .ingest import CellCoverage
    from .geo import LocalPoint

    cells = []
    for cid, site, hexa in zip(world.cell_ids, world.sites, world.hexagons):
        antenna = world.to_geo(site[None])[0]
        cells.append(CellCoverage(cid, antenna, None, tuple(world.to_geo(hexa)),
                                  LocalPoint(0.0, 0.0), 1.0))
    return format_coverage(cells)


# -------------------------------------------------------------------- truth

@dataclass
class Episode:
    label: Label
    t0: float
    t1: float
    path: np.ndarray        # (k, 2); a single row for STAY
    cum: np.ndarray         # cumulative path length at each vertex

    def position(self, t: float) -> np.ndarray:
        if self.label is Label.STAY or len(self.path) == 1 or self.t1 <= self.t0:
            return self.path[0].copy()
        s = (t - self.t0) / (self.t1 - self.t0) * self.cum[-1]
        return np.array([np.interp(s, self.cum, self.path[:, 0]),
                         np.interp(s, self.cum, self.path[:, 1])])


@dataclass
class TruthTrack:
    """Ground truth of one user: contiguous alternating Stay / Move episodes."""

    user: str
    imei: str
    episodes: list[Episode]
    fixes: list[TruthFix] = field(default_factory=list)

    @property
    def t0(self) -> float:
        return self.episodes[0].t0

    @property
    def t1(self) -> float:
        return self.episodes[-1].t1

    def episode_at(self, t: float) -> Episode:
        for ep in self.episodes:
            if ep.t0 <= t < ep.t1:
                return ep
        return self.episodes[-1]

    def state_at(self, t: float):
        ep = self.episode_at(t)
        return ep.position(t), ep.label


def _grid_route(nodes, a, b):
    """Node sequence from grid index ``a`` to ``b``: along the row, then the column."""
    (ja, ia), (jb, ib) = a, b
    step = 1 if ib >= ia else -1
    route = [nodes[ja, i] for i in range(ia, ib + step, step)]
    step = 1 if jb >= ja else -1
    route += [nodes[j, ib] for j in range(ja + step, jb + step, step)]
    return route


def _polyline(points) -> tuple[np.ndarray, np.ndarray]:
    pts = [np.asarray(points[0], dtype=float)]
    for p in points[1:]:
        p = np.asarray(p, dtype=float)
        if np.hypot(*(p - pts[-1])) > 1e-9:
            pts.append(p)
    path = np.array(pts)
    seg = np.hypot(*np.diff(path, axis=0).T) if len(path) > 1 else np.zeros(0)
    return path, np.concatenate([[0.0], np.cumsum(seg)])


def _places(world: World, rng, n_places):
    cfg = world.config
    ny, nx = world.nodes.shape[:2]
    places = []
    for _ in range(n_places):
        if nx and ny:
            node = (int(rng.integers(ny)), int(rng.integers(nx)))
            anchor = world.nodes[node]
        else:
            node = None
            xmin, xmax, ymin, ymax = world.box
            anchor = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        ang = rng.uniform(0, 2 * math.pi)
        off = rng.uniform(*cfg.building_offset_m)
        spot = anchor + off * np.array([math.cos(ang), math.sin(ang)])
        xmin, xmax, ymin, ymax = world.box
        spot = np.clip(spot, [xmin, ymin], [xmax, ymax])
        places.append((node, anchor, spot))
    return places


def _leg(world: World, rng, src, dst, speed, target_s):
    """Road route from place ``src`` to ``dst`` lasting roughly ``target_s``."""
    points = [src[2]]
    if src[0] is None or dst[0] is None:
        points.append(dst[2])
        return _polyline(points)
    ny, nx = world.nodes.shape[:2]
    cur = src[0]
    points.append(world.nodes[cur])
    want = speed * target_s
    length = lambda pts: _polyline(pts)[1][-1]
    # wander through random intersections until the trip is long enough
    for _ in range(50):
        rest = np.abs(np.array(dst[0]) - np.array(cur)) @ np.array([1, 1]) * world.config.road_spacing_m
        if length(points) + rest >= want:
            break
        nxt = (int(rng.integers(ny)), int(rng.integers(nx)))
        points += _grid_route(world.nodes, cur, nxt)[1:]
        cur = nxt
    points += _grid_route(world.nodes, cur, dst[0])[1:]
    points.append(dst[2])
    return _polyline(points)


def _track(world: World, rng, user: str, imei: str) -> TruthTrack:
    cfg = world.config
    places = _places(world, rng, cfg.n_places)
    t, end = 0.0, float(cfg.duration_s)
    here = 0
    episodes = []
    lo, hi = cfg.move_speed
    while t < end:
        dwell = rng.gamma(cfg.dwell_shape, cfg.dwell_mean_s / cfg.dwell_shape)
        t1 = min(end, t + dwell)
        spot = places[here][2]
        episodes.append(Episode(Label.STAY, t, t1, spot[None].copy(), np.zeros(1)))
        t = t1
        if t >= end or hi <= 0 or len(places) < 2:
            if t < end:
                episodes[-1].t1 = end
                t = end
            break
        there = int(rng.integers(len(places) - 1))
        there += there >= here
        speed = rng.uniform(max(lo, 1e-3), hi)
        target = rng.gamma(2.0, cfg.leg_mean_s / 2.0)
        path, cum = _leg(world, rng, places[here], places[there], speed, target)
        # routes snap to whole grid blocks; adjust the pace to keep the planned duration
        speed = float(np.clip(cum[-1] / target, max(lo, 1e-3), hi)) if cum[-1] > 0 else speed
        t1 = min(end, t + cum[-1] / speed)
        full = t + cum[-1] / speed
        ep = Episode(Label.MOVE, t, full, path, cum)
        if t1 < full:
            # cut the leg at the end of the simulated period
            stop = ep.position(t1)
            keep = cum < cum[-1] * (t1 - t) / (full - t)
            path2, cum2 = _polyline(list(path[keep]) + [stop])
            ep = Episode(Label.MOVE, t, t1, path2, cum2)
        episodes.append(ep)
        t = t1
        here = there
    return TruthTrack(user, imei, episodes)


def _sample_fixes(world: World, track: TruthTrack, times, rng):
    """Positions and labels at absolute ``times``; MOVE fixes get GPS jitter."""
    cfg = world.config
    rel = np.asarray(times, dtype=float) - cfg.start_time
    starts = np.array([ep.t0 for ep in track.episodes])
    which = np.clip(np.searchsorted(starts, rel, side="right") - 1, 0, len(starts) - 1)
    pos = np.empty((len(rel), 2))
    labels = []
    for k, ep in enumerate(track.episodes):
        sel = which == k
        if not sel.any():
            continue
        if ep.label is Label.STAY or len(ep.path) == 1 or ep.t1 <= ep.t0:
            pos[sel] = ep.path[0]
        else:
            dist = np.clip((rel[sel] - ep.t0) / (ep.t1 - ep.t0), 0.0, 1.0) * ep.cum[-1]
            pos[sel, 0] = np.interp(dist, ep.cum, ep.path[:, 0])
            pos[sel, 1] = np.interp(dist, ep.cum, ep.path[:, 1])
    labels = [track.episodes[k].label for k in which]
    moving = np.array([lab is Label.MOVE for lab in labels], dtype=bool)
    if cfg.move_jitter_m > 0 and moving.any():
        pos[moving] += cfg.move_jitter_m * rng.standard_normal((int(moving.sum()), 2))
    return [(p, lab) for p, lab in zip(pos, labels)]


def generate_truth(config: SimConfig, world: World | None = None) -> list[TruthTrack]:
    """Annotated tracks for every user, with dense fixes every ``truth_interval_s``."""
    cfg = config.validate()
    world = world or generate_world(cfg)
    rng = substream(cfg.seed, "truth")
    tracks = []
    for u in range(cfg.n_users):
        user = f"24801{u + 1:010d}"
        imei = f"35{int(rng.integers(10**12, 10**13)):013d}"
        track = _track(world, rng, user, imei)
        times = cfg.start_time + np.arange(0.0, cfg.duration_s + 1e-9, cfg.truth_interval_s)
        times = np.round(times).astype(np.int64)
        fixes = _sample_fixes(world, track, times, rng)
        geo = world.to_geo(np.array([p for p, _ in fixes]))
        track.fixes = [TruthFix(user, int(ts), g, lab) for ts, g, (_, lab) in zip(times, geo, fixes)]
        tracks.append(track)
    return tracks


# ---------------------------------------------------------------------- CDR

@dataclass
class CdrSample:
    records: list[CdrRecord]
    observations: list[CoverageObservation]
    positions: np.ndarray           # (n, 2) true positions, simulator frame
    labels: list[Label]
    inside_polygon: np.ndarray      # bool per record: served by the nearest site's hexagon


_EVENT_KINDS = (EventKind.CALL, EventKind.SMS, EventKind.DATA, EventKind.OTHER)


def sample_cdr(truth: Sequence[TruthTrack], world: World, config: SimConfig | None = None) -> CdrSample:
    """Poisson event times per user, noisy serving cell, paired GPS observations."""
    cfg = (config or world.config).validate()
    rng = substream(cfg.seed, "cdr")
    records, obs, positions, labels = [], [], [], []
    inside = []
    rate = cfg.event_rate_per_h / 3600.0
    for track in truth:
        span = track.t1 - track.t0
        n = int(rng.poisson(rate * span)) if rate > 0 else 0
        if n == 0:
            continue
        rel = np.sort(rng.uniform(track.t0, track.t1, n))
        times = np.floor(cfg.start_time + rel).astype(np.int64)
        fixes = _sample_fixes(world, track, times, rng)
        xy = np.array([p for p, _ in fixes])
        serving = world.serving_cells(xy, rng)
        kinds = rng.integers(len(_EVENT_KINDS), size=n)
        geo = world.to_geo(xy)
        nearest = world.nearest_site(xy)
        for k in range(n):
            cid = world.cell_ids[serving[k]]
            records.append(CdrRecord(track.user, track.imei, cid, int(times[k]), _EVENT_KINDS[kinds[k]]))
            obs.append(CoverageObservation(cid, geo[k]))
            labels.append(fixes[k][1])
        positions.append(xy)
        inside.append(serving == nearest)
    positions = np.concatenate(positions) if positions else np.zeros((0, 2))
    inside = np.concatenate(inside) if inside else np.zeros(0, dtype=bool)
    return CdrSample(records, obs, positions, labels, inside)


def sample_observations(world: World, n: int | None = None, seed_label: str = "observations"):
    """GPS calibration campaign: uniform points in the roaming area and their serving cells.

    Returns ``(observations, inside)`` where ``inside`` flags fixes lying in
    the serving cell's hexagon (i.e. served by the nearest site).
    """
    cfg = world.config
    n = cfg.n_observations if n is None else n
    rng = substream(cfg.seed, seed_label)
    xmin, xmax, ymin, ymax = world.box
    xy = np.column_stack([rng.uniform(xmin, xmax, n), rng.uniform(ymin, ymax, n)])
    serving = world.serving_cells(xy, rng)
    geo = world.to_geo(xy)
    obs = [CoverageObservation(world.cell_ids[s], g) for s, g in zip(serving, geo)]
    return obs, serving == world.nearest_site(xy)


def buildings_geojson(world: World, truth: Sequence[TruthTrack], size_m: float = 40.0) -> str:
    """Square footprints around every stay location of every user."""
    spots = []
    for track in truth:
        for ep in track.episodes:
            if ep.label is Label.STAY:
                key = tuple(np.round(ep.path[0], 6))
                if key not in spots:
                    spots.append(key)
    h = size_m / 2.0
    polys = [world.to_geo(np.array([[x - h, y - h], [x + h, y - h], [x + h, y + h], [x - h, y + h]]))
             for x, y in spots]
    world.buildings = [np.array(s) for s in spots]
    world.buildings_geojson = format_polygons(polys)
    return world.buildings_geojson
