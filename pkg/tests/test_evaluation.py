import json
import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdrloc.errors import InsufficientData, MissingVariant
from cdrloc.evaluation import (REFERENCE, VARIANTS, Pair, episode_accuracy, error_summary, evaluate,
                               pair_truth, rmse_table)
from cdrloc.geo import GeoPoint
from cdrloc.ingest import Label, TruthFix


@dataclass
class Est:
    imsi: str
    timestamp: int
    lat: float
    lon: float
    label: str


def fix(t, lat=58.38, lon=26.72, label=Label.STAY, user="u"):
    return TruthFix(user, t, GeoPoint(lat, lon), label)


def pair(truth_label, pred_label, err_deg=0.0):
    return Pair("u", 0, GeoPoint(58.38 + err_deg, 26.72), GeoPoint(58.38, 26.72),
                truth_label, pred_label, 0.0)


def test_identical_timestamps_pair_one_to_one():
    truth = [fix(t) for t in (100, 200, 300)]
    ests = [Est("u", t, 58.38, 26.72, "STAY") for t in (100, 200, 300)]
    pairs, unpaired = pair_truth(ests, truth)
    assert [p.timestamp for p in pairs] == [100, 200, 300] and unpaired == 0
    assert all(p.skew == 0 for p in pairs)


def test_gap_beyond_skew_excludes():
    truth = [fix(0), fix(1000)]
    pairs, unpaired = pair_truth([Est("u", 500, 58.38, 26.72, "STAY")], truth, max_skew=60)
    assert pairs == [] and unpaired == 1


def test_unknown_user_unpaired():
    pairs, unpaired = pair_truth([Est("x", 0, 0, 0, "STAY")], [fix(0)])
    assert unpaired == 1


def test_pairing_matches_exhaustive_search():
    rng = np.random.default_rng(31)
    truth_t = np.sort(rng.choice(100_000, 400, replace=False))
    truth = [fix(int(t), lat=58 + k * 1e-4) for k, t in enumerate(truth_t)]
    est_t = rng.integers(0, 100_000, 500)
    ests = [Est("u", int(t), 58.0, 26.7, "MOVE") for t in est_t]
    pairs, unpaired = pair_truth(ests, truth, max_skew=60)
    got = {p.timestamp: p.truth.lat for p in pairs}
    n_expected = 0
    for t in est_t:
        d = np.abs(truth_t - t)
        best = np.min(d)
        if best > 60:
            assert int(t) not in got
            continue
        n_expected += 1
        k = int(np.flatnonzero(d == best)[0])        # earliest on ties
        assert got[int(t)] == truth[k].location.lat
    assert len(pairs) == n_expected and unpaired == len(est_t) - n_expected


def test_accuracy_examples():
    perfect = [pair("STAY", "STAY"), pair("MOVE", "MOVE")]
    a = episode_accuracy(perfect)
    assert (a.stay, a.move) == (1.0, 1.0)
    all_stay = [pair("STAY", "STAY"), pair("MOVE", "STAY")] * 3
    a = episode_accuracy(all_stay)
    assert (a.stay, a.move) == (1.0, 0.0)
    assert a.n == 6


def test_empty_class_is_undefined():
    a = episode_accuracy([pair("STAY", "MOVE")])
    assert a.stay == 0.0 and a.move is None


@given(st.lists(st.tuples(st.sampled_from(["STAY", "MOVE"]), st.sampled_from(["STAY", "MOVE"])),
                min_size=1, max_size=12))
def test_accuracy_permutation_invariant(rows):
    pairs = [pair(t, p) for t, p in rows]
    ref = episode_accuracy(pairs)
    rev = episode_accuracy(pairs[::-1])
    assert (ref.stay, ref.move, ref.confusion) == (rev.stay, rev.move, rev.confusion)
    assert ref.n == len(pairs)


def test_error_examples():
    z = error_summary([0.0, 0.0, 0.0])
    assert (z.mean, z.std) == (0.0, 0.0)
    s = error_summary([3000.0, 4000.0])
    assert s.mean == pytest.approx(3500.0) and s.std == pytest.approx(500.0)
    assert s.rmse == pytest.approx(math.sqrt((3000 ** 2 + 4000 ** 2) / 2))
    with pytest.raises(InsufficientData):
        error_summary([1.0])


@given(st.lists(st.floats(0, 50_000), min_size=2, max_size=50), st.sampled_from([100.0, 500.0]))
def test_error_summary_consistency(errors, width):
    s = error_summary(errors, width)
    assert sum(s.counts) == len(errors)
    assert s.rmse ** 2 == pytest.approx(s.mean ** 2 + s.std ** 2, rel=1e-9, abs=1e-9)
    assert s.rmse >= 0


def test_rmse_table_examples():
    same = [pair("STAY", "STAY", 0.01), pair("MOVE", "MOVE", 0.02)]
    table = rmse_table({v: same for v in VARIANTS})
    for lab in ("STAY", "MOVE"):
        assert len({table[lab][v] for v in VARIANTS}) == 1
    zero = rmse_table({v: [pair("STAY", "STAY"), pair("MOVE", "MOVE")] for v in VARIANTS})
    assert all(x == 0.0 for row in zero.values() for x in row.values())
    with pytest.raises(MissingVariant):
        rmse_table({"Opt": same})


def test_reference_constants():
    r = REFERENCE
    assert r["episode_accuracy"]["stay"] == {"No-opt": 0.75, "Opt": 0.92}
    assert r["episode_accuracy"]["move"] == {"No-opt": 0.54, "Opt": 0.87}
    assert r["error_mean_std_m"]["MOVE"] == {"No-opt": (4912.9, 6510.4), "Opt": (4937.0, 6083.2)}
    assert r["error_mean_std_m"]["STAY"] == {"No-opt": (637.0, 2008.1), "Opt": (476.4, 1739.2)}
    assert r["rmse_m"]["STAY"] == {"No-opt": 2106.8, "Opt": 1803.3, "No-opt+MM": 2788.1, "Opt+MM": 2402.6}
    assert r["rmse_m"]["MOVE"] == {"No-opt": 8156.1, "Opt": 7834.5, "No-opt+MM": 4712.1, "Opt+MM": 3344.4}
    assert r["dataset"] == {"cdr_records": 649, "users": 6, "stay_locations": 450, "move_locations": 199}


def test_evaluate_report_outputs():
    truth = [fix(t, label=Label.STAY if t < 500 else Label.MOVE) for t in range(0, 1000, 100)]
    ests = [Est("u", t, 58.38 + 0.001 * (t % 300 == 0), 26.72, "STAY" if t < 600 else "MOVE")
            for t in range(0, 1000, 100)]
    report = evaluate({v: ests for v in VARIANTS}, truth)
    doc = json.loads(report.to_json())
    assert doc["accuracy"]["Opt"]["stay"] == 1.0
    assert doc["accuracy"]["Opt"]["move"] == pytest.approx(0.8)
    conf = doc["accuracy"]["Opt"]["confusion"]
    assert sum(sum(r.values()) for r in conf.values()) == doc["pairs"]["Opt"] == 10
    assert doc["reference"]["dataset"]["cdr_records"] == 649
    csv_lines = report.histogram_csv().splitlines()
    assert csv_lines[0] == "variant,label,bin_lo_m,bin_hi_m,count"
    dat = report.gnuplot_columns("STAY").splitlines()
    assert dat[0].startswith("#") and len(dat[1].split()) == 5
    with pytest.raises(MissingVariant):
        evaluate({"Opt": ests}, truth)
