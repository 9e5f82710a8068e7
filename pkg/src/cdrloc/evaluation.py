"""Scoring against annotated GPS ground truth.

Estimates are paired with the time-nearest truth fix of the same user, then
scored for Move/Stay classification and for position error (haversine).
The four pipeline variants (with/without coverage optimisation, with/without
map-matching) are summarised as an RMSE table.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientData, MissingVariant
from .geo import GeoPoint, haversine_array
from .ingest import TruthFix

VARIANTS = ("No-opt", "Opt", "No-opt+MM", "Opt+MM")
LABELS = ("STAY", "MOVE")

# Published figures from the original field study (proprietary data, six
# users, 649 CDR records). Context for reports only, never thresholds.
REFERENCE = {
    "episode_accuracy": {"stay": {"No-opt": 0.75, "Opt": 0.92},
                         "move": {"No-opt": 0.54, "Opt": 0.87}},
    "error_mean_std_m": {"MOVE": {"No-opt": (4912.9, 6510.4), "Opt": (4937.0, 6083.2)},
                         "STAY": {"No-opt": (637.0, 2008.1), "Opt": (476.4, 1739.2)}},
    "rmse_m": {"STAY": {"No-opt": 2106.8, "Opt": 1803.3, "No-opt+MM": 2788.1, "Opt+MM": 2402.6},
               "MOVE": {"No-opt": 8156.1, "Opt": 7834.5, "No-opt+MM": 4712.1, "Opt+MM": 3344.4}},
    "dataset": {"cdr_records": 649, "users": 6, "stay_locations": 450, "move_locations": 199},
}


@dataclass(frozen=True)
class Pair:
    imsi: str
    timestamp: int
    estimate: GeoPoint
    truth: GeoPoint
    truth_label: str
    predicted_label: str
    skew: float

    @property
    def error(self) -> float:
        return float(haversine_array(self.estimate.lat, self.estimate.lon,
                                     self.truth.lat, self.truth.lon))


def _label(x) -> str:
    return getattr(x, "value", x)


def pair_truth(estimates: Iterable, truth: Sequence[TruthFix], max_skew: float = 60.0):
    """Pair each estimate with the time-nearest truth fix of its user.

    ``estimates`` need ``imsi``, ``timestamp``, ``lat``, ``lon`` and ``label``
    attributes. Fixes further than ``max_skew`` seconds away do not pair; on
    equal skew the earlier fix wins. Returns ``(pairs, n_unpaired)``.
    """
    by_user: dict[str, list[TruthFix]] = {}
    for f in truth:
        by_user.setdefault(f.imsi, []).append(f)
    times = {}
    for user, fixes in by_user.items():
        fixes.sort(key=lambda f: f.timestamp)
        times[user] = [f.timestamp for f in fixes]

    pairs, unpaired = [], 0
    for e in estimates:
        fixes = by_user.get(e.imsi)
        if not fixes:
            unpaired += 1
            continue
        ts = times[e.imsi]
        k = bisect.bisect_left(ts, e.timestamp)
        best = None
        for j in (k - 1, k):
            if 0 <= j < len(ts):
                skew = abs(ts[j] - e.timestamp)
                if best is None or skew < best[0]:
                    best = (skew, j)
        if best is None or best[0] > max_skew:
            unpaired += 1
            continue
        f = fixes[best[1]]
        pairs.append(Pair(e.imsi, e.timestamp, GeoPoint(e.lat, e.lon), f.location,
                          _label(f.label), _label(e.label), float(best[0])))
    return pairs, unpaired


@dataclass
class EpisodeAccuracy:
    stay: float | None
    move: float | None
    confusion: dict[str, dict[str, int]]

    @property
    def n(self) -> int:
        return sum(sum(row.values()) for row in self.confusion.values())


def episode_accuracy(pairs: Iterable[Pair]) -> EpisodeAccuracy:
    """Per-class accuracy keyed by the truth label; ``None`` for an empty class."""
    conf = {t: {p: 0 for p in LABELS} for t in LABELS}
    for p in pairs:
        conf[p.truth_label][p.predicted_label] += 1
    acc = {}
    for lab in LABELS:
        total = sum(conf[lab].values())
        acc[lab] = conf[lab][lab] / total if total else None
    return EpisodeAccuracy(acc["STAY"], acc["MOVE"], conf)


@dataclass
class ErrorStats:
    n: int
    mean: float
    std: float
    rmse: float
    bin_edges: list[float]
    counts: list[int]


def error_summary(errors, bin_width: float = 500.0) -> ErrorStats:
    """Mean, population std, RMSE and a fixed-width histogram of errors (m)."""
    e = np.asarray(list(errors), dtype=float)
    if len(e) < 2:
        raise InsufficientData(f"need at least 2 errors, got {len(e)}")
    top = max(bin_width, math.ceil(e.max() / bin_width) * bin_width)
    if e.max() >= top:
        top += bin_width
    edges = np.arange(0.0, top + bin_width / 2, bin_width)
    counts, _ = np.histogram(e, bins=edges)
    return ErrorStats(len(e), float(e.mean()), float(e.std()), float(np.sqrt(np.mean(e ** 2))),
                      edges.tolist(), counts.astype(int).tolist())


def error_stats(pairs: Sequence[Pair], bin_width: float = 500.0) -> dict[str, ErrorStats]:
    """Error summaries per truth label (labels with < 2 pairs are omitted)."""
    out = {}
    for lab in LABELS:
        errs = [p.error for p in pairs if p.truth_label == lab]
        if len(errs) >= 2:
            out[lab] = error_summary(errs, bin_width)
    if not out:
        raise InsufficientData("no label has at least 2 paired estimates")
    return out


def rmse_table(variant_pairs: Mapping[str, Sequence[Pair]]) -> dict[str, dict[str, float]]:
    """RMSE in meters per truth label and variant."""
    for v in VARIANTS:
        if v not in variant_pairs:
            raise MissingVariant(v)
    table = {}
    for lab in LABELS:
        table[lab] = {}
        for v in VARIANTS:
            errs = np.array([p.error for p in variant_pairs[v] if p.truth_label == lab])
            table[lab][v] = float(np.sqrt(np.mean(errs ** 2))) if len(errs) else math.nan
    return table


@dataclass
class EvalReport:
    accuracy: dict[str, dict]
    errors: dict[str, dict[str, dict]]
    rmse: dict[str, dict[str, float]]
    pairs: dict[str, int]
    unpaired: dict[str, int]
    reference: dict = field(default_factory=lambda: REFERENCE)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("variant", "label", "bin_lo_m", "bin_hi_m", "count"))
        for v in VARIANTS:
            for lab, st in sorted(self.errors.get(v, {}).items()):
                edges = st["bin_edges"]
                for lo, hi, c in zip(edges, edges[1:], st["counts"]):
                    w.writerow((v, lab, repr(lo), repr(hi), c))
        return buf.getvalue()

    def gnuplot_columns(self, label: str) -> str:
        """Whitespace columns ``bin_center`` + one count column per variant."""
        series = {v: self.errors.get(v, {}).get(label) for v in VARIANTS}
        width = max((s["bin_edges"][1] - s["bin_edges"][0] for s in series.values() if s), default=500.0)
        n = max((len(s["counts"]) for s in series.values() if s), default=0)
        lines = ["# bin_center_m " + " ".join(v.replace(" ", "_") for v in VARIANTS)]
        for k in range(n):
            vals = []
            for v in VARIANTS:
                s = series[v]
                vals.append(str(s["counts"][k]) if s and k < len(s["counts"]) else "0")
            lines.append(f"{(k + 0.5) * width:.1f} " + " ".join(vals))
        return "\n".join(lines) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, np.generic):
        return x.item()
    return x


def evaluate(variant_estimates: Mapping[str, Iterable], truth: Sequence[TruthFix],
             max_skew: float = 60.0, bin_width: float = 500.0) -> EvalReport:
    """Full report for the four variants.

    Episode accuracy is reported for ``No-opt`` and ``Opt`` (map-matching does
    not change labels).
    """
    for v in VARIANTS:
        if v not in variant_estimates:
            raise MissingVariant(v)
    paired, unpaired = {}, {}
    for v in VARIANTS:
        paired[v], unpaired[v] = pair_truth(variant_estimates[v], truth, max_skew)
    accuracy = {}
    for v in ("No-opt", "Opt"):
        a = episode_accuracy(paired[v])
        accuracy[v] = {"stay": a.stay, "move": a.move, "confusion": a.confusion}
    errors = {}
    for v in VARIANTS:
        try:
            errors[v] = {lab: asdict(st) for lab, st in error_stats(paired[v], bin_width).items()}
        except InsufficientData:
            errors[v] = {}
    return EvalReport(accuracy, errors, rmse_table(paired),
                      {v: len(paired[v]) for v in VARIANTS}, unpaired)
