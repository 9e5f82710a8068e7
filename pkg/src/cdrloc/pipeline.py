"""Glue between the stages: per-user estimation and the estimate/match tables."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geo import LocalProjection
from .ingest import CoverageMap, Trajectory, _csv_rows, _parse_float, _parse_int
from .mapmatch import MatchConfig, MatchResult, RoadNetwork, match_trajectory
from .skf import STAY, ModelBank, SkfConfig, StepResult, classify_episodes, skf_filter, skf_smooth

ESTIMATE_HEADER = ("imsi", "timestamp", "cell_id", "lat", "lon",
                   "p_stay_filtered", "p_stay_smoothed", "label")
MATCHED_HEADER = ("imsi", "timestamp", "label", "est_lat", "est_lon",
                  "matched_lat", "matched_lon", "segment_id", "distance_m", "status")


@dataclass(frozen=True)
class EstimateRow:
    imsi: str
    timestamp: int
    cell_id: str
    lat: float
    lon: float
    p_stay_filtered: float
    p_stay_smoothed: float
    label: str


@dataclass(frozen=True)
class MatchedRow:
    imsi: str
    timestamp: int
    label: str
    est_lat: float
    est_lon: float
    matched_lat: float | None
    matched_lon: float | None
    segment_id: str
    distance_m: float | None
    status: str

    @property
    def lat(self) -> float:
        return self.est_lat if self.matched_lat is None else self.matched_lat

    @property
    def lon(self) -> float:
        return self.est_lon if self.matched_lon is None else self.matched_lon


@dataclass
class UserEstimate:
    user: str
    steps: list[StepResult]
    labels: list[str]
    loglik: float


def estimate_user(traj: Trajectory, cells: CoverageMap, config: SkfConfig | None = None) -> UserEstimate:
    cfg = config or SkfConfig()
    bank = ModelBank.from_config(cfg)
    fr = skf_filter(traj, cells, cfg, bank)
    steps = skf_smooth(fr)
    stay = bank.index(STAY) if STAY in bank.names else None
    if stay is None:
        labels = ["MOVE"] * len(steps)
    else:
        labels = classify_episodes(steps, cfg.threshold, stay_index=stay)
    return UserEstimate(traj.user, steps, labels, fr.loglik)


def _estimate_job(args):
    return estimate_user(*args)


def estimate_all(trajectories: Sequence[Trajectory], cells: CoverageMap,
                 config: SkfConfig | None = None, jobs: int = 1) -> list[UserEstimate]:
    """Estimate every non-empty trajectory; output order follows the input."""
    trajs = [t for t in trajectories if len(t.events)]
    args = [(t, cells, config) for t in trajs]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_estimate_job, args))
    return [_estimate_job(a) for a in args]


def estimate_rows(estimates: Iterable[UserEstimate], projection: LocalProjection,
                  filtered: bool = False) -> list[EstimateRow]:
    rows = []
    for est in estimates:
        stay = 1 if len(est.steps) and len(est.steps[0].filtered_probs) > 1 else None
        if not est.steps:
            continue
        xy = np.array([(s.filtered if filtered else s.smoothed).mean[:2] for s in est.steps])
        lat, lon = projection.from_local_array(xy)
        for k, s in enumerate(est.steps):
            rows.append(EstimateRow(
                est.user, int(s.timestamp), s.cell_id, float(lat[k]), float(lon[k]),
                float(s.filtered_probs[stay]) if stay is not None else 0.0,
                float(s.smoothed_probs[stay]) if stay is not None else 0.0,
                est.labels[k]))
    return rows


def match_rows(rows: Sequence[EstimateRow], net: RoadNetwork, projection: LocalProjection,
               config: MatchConfig | None = None, buildings=None) -> list[MatchedRow]:
    cfg = config or MatchConfig()
    if not rows:
        return []
    xy = projection.to_local_array([r.lat for r in rows], [r.lon for r in rows])
    results = match_trajectory(xy, [r.label for r in rows], net, projection, cfg, buildings)
    return [_matched_row(r, m, projection) for r, m in zip(rows, results)]


def _matched_row(r: EstimateRow, m: MatchResult, projection: LocalProjection) -> MatchedRow:
    if m.is_matched:
        g = projection.from_local(m.matched)
        return MatchedRow(r.imsi, r.timestamp, r.label, r.lat, r.lon, g.lat, g.lon,
                          str(m.segment_id), m.distance, m.status.value)
    return MatchedRow(r.imsi, r.timestamp, r.label, r.lat, r.lon, None, None, "", None,
                      m.status.value)


# ------------------------------------------------------------------- tables

def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def format_estimates(rows: Iterable[EstimateRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_HEADER)
    for r in rows:
        w.writerow((r.imsi, r.timestamp, r.cell_id, _num(r.lat), _num(r.lon),
                    _num(r.p_stay_filtered), _num(r.p_stay_smoothed), r.label))
    return buf.getvalue()


def parse_estimates(source) -> list[EstimateRow]:
    rows = []
    for line_no, (imsi, ts, cell, lat, lon, pf, ps, label) in _csv_rows(source, ESTIMATE_HEADER):
        rows.append(EstimateRow(imsi, _parse_int(ts, line_no, "timestamp"), cell,
                                _parse_float(lat, line_no, "lat"), _parse_float(lon, line_no, "lon"),
                                _parse_float(pf, line_no, "p_stay_filtered"),
                                _parse_float(ps, line_no, "p_stay_smoothed"), label))
    return rows


def format_matched(rows: Iterable[MatchedRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MATCHED_HEADER)
    for r in rows:
        w.writerow((r.imsi, r.timestamp, r.label, _num(r.est_lat), _num(r.est_lon),
                    _num(r.matched_lat), _num(r.matched_lon), r.segment_id,
                    _num(r.distance_m), r.status))
    return buf.getvalue()


def parse_matched(source) -> list[MatchedRow]:
    rows = []
    for line_no, vals in _csv_rows(source, MATCHED_HEADER):
        imsi, ts, label, elat, elon, mlat, mlon, seg, dist, status = vals
        opt = lambda v, what: _parse_float(v, line_no, what) if v else None
        rows.append(MatchedRow(imsi, _parse_int(ts, line_no, "timestamp"), label,
                               _parse_float(elat, line_no, "est_lat"),
                               _parse_float(elon, line_no, "est_lon"),
                               opt(mlat, "matched_lat"), opt(mlon, "matched_lon"), seg,
                               opt(dist, "distance_m"), status))
    return rows
