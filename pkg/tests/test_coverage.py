import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from cdrloc.coverage import (CoverageConfig, CoverageProblem, circle_around_polygon,
                             optimize_extensions, penalty, penalty_gradient, read_extensions)
from cdrloc.errors import UnknownCell
from cdrloc.geo import GeoPoint, LocalPoint, LocalProjection
from cdrloc.ingest import CellCoverage, CoverageMap, CoverageObservation

PROJ = LocalProjection(GeoPoint(58.38, 26.72))


def make_cells(radii, centers=None):
    centers = centers if centers is not None else [(0.0, 0.0)] * len(radii)
    cells = []
    for k, (r, c) in enumerate(zip(radii, centers)):
        ant = PROJ.from_local(LocalPoint(*c))
        cells.append(CellCoverage(f"C{k}", ant, None, (ant, ant, ant), LocalPoint(*c), float(r)))
    return CoverageMap(cells, PROJ)


def obs_at(cell_id, x, y):
    return CoverageObservation(cell_id, PROJ.from_local(LocalPoint(x, y)))


def test_omni_square_circle():
    a = 50.0
    sq = [LocalPoint(-a, -a), LocalPoint(a, -a), LocalPoint(a, a), LocalPoint(-a, a)]
    c, r = circle_around_polygon(LocalPoint(0, 0), sq, None)
    assert c == pytest.approx((0, 0))
    assert r == pytest.approx(a * math.sqrt(2))


def test_corner_antenna_encloses_square():
    sq = [LocalPoint(0, 0), LocalPoint(100, 0), LocalPoint(100, 100), LocalPoint(0, 100)]
    c, r = circle_around_polygon(LocalPoint(0, 0), sq, 45.0)
    # shifted half the max reach towards the opposite corner
    assert c == pytest.approx((50, 50))
    for v in sq:
        assert math.hypot(v.x - c[0], v.y - c[1]) <= r + 1e-9


def test_equidistant_triangle_no_shift():
    tri = [LocalPoint(100 * math.sin(a), 100 * math.cos(a)) for a in (0.0, 2.0, 4.0)]
    _, r = circle_around_polygon(LocalPoint(0, 0), tri, 90.0, shift_factor=0.0)
    assert r == pytest.approx(100.0)


@given(st.lists(st.tuples(st.floats(-1000, 1000), st.floats(-1000, 1000)), min_size=3, max_size=8),
       st.one_of(st.none(), st.floats(0, 360)), st.floats(0, 1))
def test_circle_always_encloses_polygon(pts, az, shift):
    poly = [LocalPoint(*p) for p in pts]
    assume(len(set(poly)) >= 3)
    c, r = circle_around_polygon(LocalPoint(0, 0), poly, az, shift)
    for v in poly:
        assert math.hypot(v.x - c[0], v.y - c[1]) <= r * (1 + 1e-12) + 1e-9


def test_penalty_examples():
    cells = make_cells([100.0])
    assert penalty([0.0], cells, []) == 0.0
    assert penalty([0.0], cells, [obs_at("C0", 60, 0)]) == 0.0
    obs = [obs_at("C0", 150, 0)]
    assert penalty([0.0], cells, obs) == pytest.approx(25_000.0, rel=1e-9)
    assert penalty([50.0], cells, obs) == pytest.approx(2_500.0, rel=1e-9)


def test_gradient_examples():
    cells = make_cells([100.0])
    assert np.all(penalty_gradient([0.0], cells, []) == 0.0)
    g = penalty_gradient([0.0], cells, [obs_at("C0", 150, 0)])
    assert g[0] == pytest.approx(-1000.0, rel=1e-9)


def test_unknown_cell():
    with pytest.raises(UnknownCell):
        penalty([0.0], make_cells([100.0]), [obs_at("nope", 0, 0)])


@given(st.lists(st.floats(-50, 200), min_size=3, max_size=3),
       st.lists(st.tuples(st.integers(0, 2), st.floats(0, 400)), max_size=15))
def test_penalty_nonnegative_and_gradient_matches_fd(p, raw):
    cells = make_cells([100.0, 150.0, 80.0], [(0, 0), (1000, 0), (0, 1000)])
    centers = [(0, 0), (1000, 0), (0, 1000)]
    obs = [obs_at(f"C{k}", centers[k][0] + d, centers[k][1]) for k, d in raw]
    prob = CoverageProblem.build(cells, obs)
    p = np.array(p)
    assert prob.penalty(p) >= 0
    g = prob.gradient(p)
    margins = prob.margins(p)
    for i in range(3):
        if np.any(np.abs(margins[prob.obs_cell == i]) < 1e-2):
            continue
        h = 1e-4 * max(1.0, abs(p[i]))
        e = np.zeros(3)
        e[i] = h
        fd = (prob.penalty(p + e) - prob.penalty(p - e)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("delta", [10.0, 100.0, 1000.0])
def test_single_observation_optimum(delta):
    cells = make_cells([100.0])
    res = optimize_extensions(cells, [obs_at("C0", 100.0 + delta, 0.0)])
    assert res.extensions[0] == pytest.approx(10 * delta / 11, rel=1e-3)
    # independent 1-D grid search
    grid = np.linspace(0, delta, 200_001)
    f = grid ** 2 + 10 * np.minimum(0, 100 + grid - (100 + delta)) ** 2
    assert res.extensions[0] == pytest.approx(grid[np.argmin(f)], abs=delta * 1e-4)


def test_no_observations_gives_zero():
    res = optimize_extensions(make_cells([100.0, 200.0]), [])
    assert np.all(res.extensions == 0.0)
    assert res.report.final_penalty == 0.0


def test_trace_monotone_and_report():
    rng = np.random.default_rng(5)
    centers = [(0, 0), (900, 0), (0, 900), (900, 900)]
    cells = make_cells([300, 400, 350, 250], centers)
    obs = []
    for _ in range(300):
        k = int(rng.integers(4))
        a = rng.uniform(0, 2 * math.pi)
        d = rng.uniform(0, 700)
        obs.append(obs_at(f"C{k}", centers[k][0] + d * math.cos(a), centers[k][1] + d * math.sin(a)))
    res = optimize_extensions(cells, obs)
    tr = res.report.trace
    assert all(b < a for a, b in zip(tr, tr[1:]))
    assert res.report.final_penalty <= res.report.initial_penalty
    assert res.report.covered_fraction_after >= res.report.covered_fraction_before
    assert np.all(res.base_radius + res.extensions >= 1.0)
    doc = json.loads(res.report.to_json())
    assert doc["n_observations"] == 300
    back = read_extensions(res.to_csv())
    assert back == pytest.approx(res.as_dict(), rel=1e-15)


def test_min_radius_floor():
    cells = make_cells([5.0])
    cfg = CoverageConfig(start=-100.0)
    res = optimize_extensions(cells, [], cfg)
    assert res.base_radius[0] + res.extensions[0] >= 1.0 - 1e-12
