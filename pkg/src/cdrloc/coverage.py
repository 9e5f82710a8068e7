"""Coverage circles and radius-extension calibration.

Each polygonal coverage area is replaced by a circle ``(x, r)``. A per-cell
extension ``p`` is then learned from GPS fixes recorded while connected to
the cell by minimising

    f(p) = sum_i p_i**2 + w * sum_(j, y) min(0, r_j + p_j - |x_j - y|)**2

i.e. a ridge term keeping corrections small plus a one-sided penalty on
fixes that fall outside their cell's (extended) circle.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DegeneratePolygon, NonFiniteEncountered, UnknownCell
from .geo import LocalPoint, LocalProjection

if TYPE_CHECKING:
    from .ingest import CellCoverage, CoverageMap, CoverageObservation

log = logging.getLogger(__name__)

DEFAULT_WEIGHT = 10.0


@dataclass
class CoverageConfig:
    weight: float = DEFAULT_WEIGHT
    shift_factor: float = 0.5
    grad_tol: float = 1e-6
    max_iter: int = 500
    min_radius: float = 1.0
    start: float = 0.0


def circle_around_polygon(antenna: LocalPoint, polygon: Sequence[LocalPoint],
                          azimuth: float | None, shift_factor: float = 0.5):
    """Circle enclosing ``polygon``, biased along the antenna bearing.

    The centre is the antenna moved ``shift_factor * max_k |antenna - v_k|``
    meters along ``azimuth`` (degrees clockwise from north; ``None`` means an
    omnidirectional site and no shift). The radius is the largest distance
    from that centre to a vertex, so every vertex lies inside the circle.
    """
    verts = np.asarray(polygon, dtype=float).reshape(-1, 2)
    if len(verts) > 1 and np.array_equal(verts[0], verts[-1]):
        verts = verts[:-1]
    if len(np.unique(verts, axis=0)) < 3:
        raise DegeneratePolygon("coverage polygon needs at least 3 distinct vertices")
    ant = np.asarray(antenna, dtype=float)
    reach = float(np.max(np.hypot(*(verts - ant).T)))
    center = ant.copy()
    if azimuth is not None and shift_factor:
        theta = math.radians(azimuth)
        center += shift_factor * reach * np.array([math.sin(theta), math.cos(theta)])
    radius = float(np.max(np.hypot(*(verts - center).T)))
    if radius <= 0:
        raise DegeneratePolygon("coverage polygon collapses to a point")
    return LocalPoint(float(center[0]), float(center[1])), radius


def enclosing_circle(cell: "CellCoverage", projection: LocalProjection,
                     shift_factor: float = 0.5):
    """(center, radius) of the circle around ``cell``'s polygon."""
    ant = projection.to_local(cell.antenna)
    poly = [projection.to_local(v) for v in cell.polygon]
    return circle_around_polygon(ant, poly, cell.azimuth, shift_factor)


@dataclass
class CoverageProblem:
    """Observations pre-reduced to (cell index, distance to circle centre)."""

    cell_ids: list[str]
    base_radius: np.ndarray
    obs_cell: np.ndarray
    obs_dist: np.ndarray
    weight: float = DEFAULT_WEIGHT

    @classmethod
    def build(cls, cells: "CoverageMap", observations: Sequence["CoverageObservation"],
              weight: float = DEFAULT_WEIGHT) -> "CoverageProblem":
        cell_ids = list(cells)
        index = {c: k for k, c in enumerate(cell_ids)}
        base = np.array([cells[c].base_radius for c in cell_ids], dtype=float)
        centers = np.array([cells[c].circle_center for c in cell_ids], dtype=float).reshape(-1, 2)
        obs_cell = np.empty(len(observations), dtype=np.intp)
        for k, o in enumerate(observations):
            try:
                obs_cell[k] = index[o.cell_id]
            except KeyError:
                raise UnknownCell(o.cell_id) from None
        if len(observations):
            xy = cells.projection.to_local_array([o.location.lat for o in observations],
                                                 [o.location.lon for o in observations])
            dist = np.hypot(*(xy - centers[obs_cell]).T)
        else:
            dist = np.zeros(0)
        return cls(cell_ids, base, obs_cell, dist, float(weight))

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    def margins(self, p) -> np.ndarray:
        """Signed coverage margin ``d = r + p - |x - y|`` per observation."""
        p = np.asarray(p, dtype=float)
        return self.base_radius[self.obs_cell] + p[self.obs_cell] - self.obs_dist

    def penalty(self, p) -> float:
        p = np.asarray(p, dtype=float)
        short = np.minimum(0.0, self.margins(p))
        return float(p @ p + self.weight * (short @ short))

    def gradient(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        short = np.minimum(0.0, self.margins(p))
        g = 2.0 * p
        g += 2.0 * self.weight * np.bincount(self.obs_cell, weights=short, minlength=self.n_cells)
        return g

    def covered_fraction(self, p) -> float:
        if len(self.obs_dist) == 0:
            return 1.0
        return float(np.mean(self.margins(p) >= 0.0))


def penalty(p, cells: "CoverageMap", observations, weight: float = DEFAULT_WEIGHT) -> float:
    return CoverageProblem.build(cells, observations, weight).penalty(p)


def penalty_gradient(p, cells: "CoverageMap", observations,
                     weight: float = DEFAULT_WEIGHT) -> np.ndarray:
    return CoverageProblem.build(cells, observations, weight).gradient(p)


@dataclass
class OptimizationReport:
    initial_penalty: float
    final_penalty: float
    iterations: int
    gradient_norm: float
    covered_fraction_before: float
    covered_fraction_after: float
    n_cells: int
    n_observations: int
    converged: bool
    message: str = ""
    trace: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        d = {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
             for k, v in asdict(self).items()}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


@dataclass
class ExtensionResult:
    cell_ids: list[str]
    base_radius: np.ndarray
    extensions: np.ndarray
    report: OptimizationReport

    def as_dict(self) -> dict[str, float]:
        return {c: float(p) for c, p in zip(self.cell_ids, self.extensions)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("cell_id", "base_radius_m", "extension_m"))
        for c, r, p in zip(self.cell_ids, self.base_radius, self.extensions):
            w.writerow((c, repr(float(r)), repr(float(p))))
        return buf.getvalue()


def _projected_grad_norm(x, g, lower):
    pg = g.copy()
    at_bound = (x <= lower) & (g > 0)
    pg[at_bound] = 0.0
    return float(np.linalg.norm(pg))


class _Stop(Exception):
    pass


def optimize_extensions(cells: "CoverageMap", observations: Sequence["CoverageObservation"],
                        config: CoverageConfig | None = None) -> ExtensionResult:
    """Minimise the coverage penalty with L-BFGS-B starting from ``p = start``.

    Stops when the projected gradient norm drops below
    ``grad_tol * max(1, |f|)`` or after ``max_iter`` iterations. Extensions are
    bounded below so every effective radius stays at least ``min_radius``.
    """
    cfg = config or CoverageConfig()
    if len(cells) == 0:
        raise ValueError("need at least one cell")
    prob = CoverageProblem.build(cells, observations, cfg.weight)
    lower = cfg.min_radius - prob.base_radius
    x0 = np.maximum(np.full(prob.n_cells, float(cfg.start)), lower)

    def check(x, f, g=None):
        if not np.isfinite(f) or (g is not None and not np.all(np.isfinite(g))) \
                or not np.all(np.isfinite(x)):
            raise NonFiniteEncountered(
                f"non-finite value in coverage optimisation (f={f}, |x|max={np.max(np.abs(x))})")

    def done(x, f):
        g = prob.gradient(x)
        return _projected_grad_norm(x, g, lower) < cfg.grad_tol * max(1.0, abs(f))

    f0 = prob.penalty(x0)
    check(x0, f0, prob.gradient(x0))
    trace = [f0]
    state = {"x": x0.copy(), "f": f0, "nit": 0, "msg": "converged at start"}

    if not done(x0, f0) and cfg.max_iter > 0:
        def fun(x):
            f = prob.penalty(x)
            g = prob.gradient(x)
            check(x, f, g)
            return f, g

        def callback(xk, *args):
            f = prob.penalty(xk)
            if not f < state["f"]:
                raise _Stop("no further decrease")
            trace.append(f)
            state.update(x=np.array(xk, dtype=float), f=f, nit=state["nit"] + 1)
            if done(xk, f):
                raise _Stop("gradient tolerance reached")

        # scipy's own tests are disabled; the callback applies ours
        try:
            res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                           bounds=list(zip(lower, [None] * prob.n_cells)),
                           callback=callback,
                           options={"maxiter": cfg.max_iter, "gtol": 0.0, "ftol": 0.0,
                                    "maxcor": 10})
            state["msg"] = str(res.message)
            if res.fun < state["f"] and np.all(res.x >= lower - 1e-12):
                state.update(x=np.array(res.x, dtype=float), f=float(res.fun))
                trace.append(float(res.fun))
        except _Stop as stop:
            state["msg"] = str(stop)

    x = np.maximum(state["x"], lower)
    f = prob.penalty(x)
    g = prob.gradient(x)
    check(x, f, g)
    gnorm = _projected_grad_norm(x, g, lower)
    report = OptimizationReport(
        initial_penalty=f0,
        final_penalty=f,
        iterations=state["nit"],
        gradient_norm=gnorm,
        covered_fraction_before=prob.covered_fraction(np.zeros(prob.n_cells)),
        covered_fraction_after=prob.covered_fraction(x),
        n_cells=prob.n_cells,
        n_observations=len(prob.obs_dist),
        converged=gnorm < cfg.grad_tol * max(1.0, abs(f)),
        message=state["msg"],
        trace=trace,
    )
    log.info("coverage optimisation: f %.4g -> %.4g in %d iterations (%s)",
             f0, f, report.iterations, report.message)
    return ExtensionResult(prob.cell_ids, prob.base_radius.copy(), x, report)


def read_extensions(source) -> dict[str, float]:
    """Parse an extensions CSV (``cell_id,base_radius_m,extension_m``)."""
    from .ingest import _csv_rows, _parse_float

    return {cell_id: _parse_float(ext, line_no, "extension_m")
            for line_no, (cell_id, _base, ext)
            in _csv_rows(source, ("cell_id", "base_radius_m", "extension_m"))}


def apply_extensions(cells: "CoverageMap", extensions: Mapping[str, float]) -> "CoverageMap":
    return cells.with_extensions(extensions)
