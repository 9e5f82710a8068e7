import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdrloc.errors import SingularInnovation, UnknownCell
from cdrloc.geo import GeoPoint, LocalPoint
from cdrloc.ingest import CellCoverage, Trajectory
from cdrloc.skf import (MOVE, STAY, ModelBank, Observation, SkfConfig, StateEstimate, StepResult,
                        build_observation, classify_episodes, kf_predict, kf_update,
                        model_transition_matrix, move_model, move_noise, move_transition,
                        run_filter, skf_filter, skf_smooth, stay_model)
from oracles import (classic_kf, classic_rts, exact_switching_posteriors, gpb2_filter,
                     switching_instance)

CFG = SkfConfig()
BANK = ModelBank.from_config(CFG)
MODELS = [(m.transition, m.noise) for m in BANK.models]


def cell(cell_id="C", radius=2000.0, ext=0.0, center=(0.0, 0.0)):
    g = GeoPoint(58.38, 26.72)
    return CellCoverage(cell_id, g, None, (g, g, g), LocalPoint(*center), radius, ext)


def random_sequence(rng, n, r_lo=200.0, r_hi=2000.0):
    gaps = rng.uniform(0, 3600, n - 1)
    gaps[rng.random(n - 1) < 0.05] = 0.0        # same-timestamp events
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    zs = rng.normal(0, 3000, (n, 2))
    Rs = np.array([np.eye(2) * s ** 2 for s in rng.uniform(r_lo, r_hi, n)])
    return times, zs, Rs


# ------------------------------------------------------------ model pieces

def test_transition_matrix():
    T = model_transition_matrix(2)
    assert np.allclose(T, [[0.8, 0.2], [0.2, 0.8]])
    assert np.allclose(model_transition_matrix(3).sum(axis=1), 1.0)
    assert np.allclose(np.diag(model_transition_matrix(3)), 0.8)


def test_stay_predict_with_zero_noise_is_identity():
    s = StateEstimate(np.array([1.0, 2.0, 3.0, 4.0]), np.eye(4) * 7)
    out = kf_predict(s, np.eye(4), np.zeros((4, 4)))
    assert np.array_equal(out.mean, s.mean) and np.array_equal(out.cov, s.cov)


def test_move_predict_by_hand():
    s = StateEstimate(np.array([0.0, 0.0, 1.0, 0.0]), np.eye(4))
    out = kf_predict(s, move_transition(10.0), np.zeros((4, 4)))
    assert np.allclose(out.mean, [10.0, 0.0, 1.0, 0.0])


@given(st.floats(0, 5000), st.floats(0, 5))
def test_predict_never_shrinks_trace(dt, q):
    s = StateEstimate(np.zeros(4), np.diag([4.0, 9.0, 1.0, 2.0]))
    out = kf_predict(s, move_transition(dt), move_noise(dt, q))
    assert np.trace(out.cov) >= np.trace(s.cov) - 1e-9


def test_uninformative_update_keeps_prior():
    s = StateEstimate(np.array([5.0, -3.0, 1.0, 2.0]), np.diag([100.0, 50.0, 4.0, 4.0]))
    out, _ = kf_update(s, Observation(np.array([1000.0, 1000.0]), 1e12 * np.eye(2)))
    assert np.allclose(out.mean, s.mean, rtol=1e-3, atol=1e-3)
    assert np.allclose(out.cov, s.cov, rtol=1e-3)


def test_zero_innovation_update():
    s = StateEstimate(np.array([5.0, -3.0, 0.0, 0.0]), np.diag([100.0, 50.0, 4.0, 4.0]))
    out, _ = kf_update(s, Observation(np.array([5.0, -3.0]), np.eye(2) * 10))
    assert np.allclose(out.mean, s.mean)
    assert np.all(np.diag(out.cov)[:2] < np.diag(s.cov)[:2])


def test_scalar_decoupled_update_matches_1d_algebra():
    P, R, m, z = 100.0, 25.0, 3.0, 13.0
    s = StateEstimate(np.array([m, 0.0, 0.0, 0.0]), np.diag([P, P, 1.0, 1.0]))
    out, ll = kf_update(s, Observation(np.array([z, 0.0]), np.eye(2) * R))
    k = P / (P + R)
    assert out.mean[0] == pytest.approx(m + k * (z - m))
    assert out.cov[0, 0] == pytest.approx((1 - k) * P)
    S = P + R
    expected = -0.5 * ((z - m) ** 2 / S + math.log(2 * math.pi * S)) - 0.5 * math.log(2 * math.pi * S)
    assert ll == pytest.approx(expected)


def test_singular_innovation():
    s = StateEstimate(np.zeros(4), np.zeros((4, 4)))
    with pytest.raises(SingularInnovation):
        kf_update(s, Observation(np.zeros(2), np.zeros((2, 2))))


def test_observation_from_cell():
    obs = build_observation(cell(radius=1500.0, ext=500.0))
    assert np.allclose(obs.R, 1000.0 ** 2 * np.eye(2))
    assert np.allclose(obs.z, [0.0, 0.0])
    obs = build_observation(cell(radius=1500.0, ext=500.0), SkfConfig(use_extensions=False))
    assert np.allclose(obs.R, 750.0 ** 2 * np.eye(2))
    fixed = build_observation(cell(), SkfConfig(r_mode="fixed"))
    assert np.allclose(fixed.R, 1.44 * np.eye(2))
    a = build_observation(cell("A", 800.0, center=(0, 0)))
    b = build_observation(cell("B", 800.0, center=(5000, 0)))
    assert np.array_equal(a.R, b.R)


def test_classification_threshold_and_tie():
    def step(p_stay):
        return StepResult(0, None, np.array([1 - p_stay, p_stay]), None,
                          np.array([1 - p_stay, p_stay]), None)
    labels = classify_episodes([step(1.0), step(0.5), step(0.49)])
    assert labels == [STAY, STAY, MOVE]


# ----------------------------------------------------------- filter/smoother

def test_single_model_matches_classic_kf_and_rts():
    rng = np.random.default_rng(11)
    bank = ModelBank.from_config(SkfConfig(models=(MOVE,)))
    m = bank.models[0]
    for _ in range(10):
        times, zs, Rs = random_sequence(rng, 30)
        fr = run_filter(times, zs, Rs, bank)
        steps = skf_smooth(fr)
        xs, Ps, _, _, ll = classic_kf(times, zs, Rs, m.transition, m.noise, 40.0)
        xs_s, Ps_s = classic_rts(times, xs, Ps, m.transition, m.noise)
        for t, s in enumerate(steps):
            assert np.allclose(s.filtered.mean, xs[t], atol=1e-9, rtol=0)
            assert np.allclose(s.filtered.cov, Ps[t], atol=1e-9, rtol=1e-12)
            assert np.allclose(s.smoothed.mean, xs_s[t], atol=1e-9, rtol=0)
            assert np.allclose(s.smoothed.cov, Ps_s[t], atol=1e-9, rtol=1e-12)
            assert s.filtered_probs[0] == 1.0 and s.smoothed_probs[0] == 1.0
        assert fr.loglik == pytest.approx(ll, rel=1e-12)


def test_filter_matches_textbook_gpb2():
    rng = np.random.default_rng(13)
    for _ in range(30):
        times, zs, Rs = random_sequence(rng, int(rng.integers(2, 40)))
        want = gpb2_filter(times, zs, Rs, MODELS, BANK.T, 40.0)
        got = np.array([s.filtered_probs for s in run_filter(times, zs, Rs, BANK).steps])
        assert np.abs(got - want).max() <= 1e-9


def test_three_events_match_enumeration():
    rng = np.random.default_rng(12)
    for _ in range(50):
        times, zs, Rs = switching_instance(rng, MODELS, BANK.T, 3)
        f, s, _ = exact_switching_posteriors(times, zs, Rs, MODELS, BANK.T, 40.0)
        steps = skf_smooth(run_filter(times, zs, Rs, BANK))
        assert np.abs(np.array([x.filtered_probs for x in steps]) - f).max() <= 0.02
        assert np.abs(np.array([x.smoothed_probs for x in steps]) - s).max() <= 0.05


def test_two_events_filter_is_exact():
    # with one transition there is nothing to collapse
    rng = np.random.default_rng(13)
    for _ in range(20):
        times, zs, Rs = switching_instance(rng, MODELS, BANK.T, 2)
        f, s, _ = exact_switching_posteriors(times, zs, Rs, MODELS, BANK.T, 40.0)
        steps = skf_smooth(run_filter(times, zs, Rs, BANK))
        assert np.allclose([x.filtered_probs for x in steps], f, atol=1e-9)


def test_stationary_user_is_stay():
    traj = Trajectory("u", tuple((1_700_000_000 + 300 * k, "C") for k in range(20)))
    fr = skf_filter(traj, {"C": cell(radius=1500.0)}, CFG)
    assert fr.steps[-1].filtered_probs[BANK.index(STAY)] > 0.9


def test_unknown_cell():
    traj = Trajectory("u", ((1, "C"), (2, "X")))
    with pytest.raises(UnknownCell):
        skf_filter(traj, {"C": cell()}, CFG)


def test_zero_dt_skips_prediction():
    times = [0.0, 0.0]
    zs = [[0.0, 0.0], [100.0, 0.0]]
    Rs = [np.eye(2) * 100.0] * 2
    fr = run_filter(times, zs, Rs, BANK)
    # both models see the same (unpredicted) prior, so the update is shared
    assert np.allclose(fr.means[1, 0], fr.means[1, 1])
    assert np.allclose(fr.probs[1], [0.5, 0.5])


def test_long_gap_is_flagged():
    fr = run_filter([0.0, 7 * 3600.0], [[0, 0], [10, 0]], [np.eye(2) * 1e4] * 2, BANK)
    assert fr.steps[1].gap_capped and not fr.steps[0].gap_capped


def test_loglik_invariant_under_model_relabelling():
    rng = np.random.default_rng(14)
    swapped = ModelBank([stay_model(), move_model()], BANK.T)
    for _ in range(10):
        times, zs, Rs = switching_instance(rng, MODELS, BANK.T, 12)
        a = run_filter(times, zs, Rs, BANK)
        b = run_filter(times, zs, Rs, swapped)
        assert a.loglik == pytest.approx(b.loglik, rel=1e-10)
        assert np.allclose(a.probs, b.probs[:, ::-1], atol=1e-12)


def _check_hygiene(steps):
    for s in steps:
        for probs in (s.filtered_probs, s.smoothed_probs):
            assert abs(probs.sum() - 1.0) <= 1e-9
            assert np.all((probs >= 0) & (probs <= 1))
        for est in (s.filtered, s.smoothed):
            assert np.all(np.isfinite(est.mean))
            assert np.max(np.abs(est.cov - est.cov.T)) <= 1e-9 * max(1.0, np.max(np.abs(est.cov)))
            assert np.linalg.eigvalsh(est.cov).min() >= -1e-9 * max(1.0, np.max(np.abs(est.cov)))


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.integers(1, 25))
def test_probabilities_and_covariances_stay_valid(seed, n):
    rng = np.random.default_rng(seed)
    times, zs, Rs = random_sequence(rng, n)
    _check_hygiene(skf_smooth(run_filter(times, zs, Rs, BANK)))
