"""In-memory end-to-end runs on simulated data (no files)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coverage import CoverageConfig, ExtensionResult, optimize_extensions
from .evaluation import EvalReport, evaluate
from .ingest import CoverageMap, build_trajectories
from .mapmatch import MatchConfig
from .pipeline import EstimateRow, MatchedRow, UserEstimate, estimate_all, estimate_rows, match_rows
from .sim import SimConfig, World, generate_truth, generate_world, sample_cdr, sample_observations
from .skf import SkfConfig


@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    coverage: CoverageConfig = field(default_factory=CoverageConfig)
    skf: SkfConfig = field(default_factory=SkfConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    observations: str = "both"     # "campaign", "events" or "both"
    max_skew: float = 60.0
    bin_width: float = 500.0


@dataclass
class ExperimentRun:
    world: World
    extensions: ExtensionResult
    estimates: dict[str, list[UserEstimate]]
    rows: dict[str, list[EstimateRow] | list[MatchedRow]]
    report: EvalReport
    truth: list


def calibration_observations(world, sample, source: str):
    if source == "events":
        return list(sample.observations)
    campaign, _ = sample_observations(world)
    if source == "campaign":
        return campaign
    if source == "both":
        return campaign + list(sample.observations)
    raise ValueError(f"unknown observation source {source!r}")


def run_experiment(config: ExperimentConfig) -> ExperimentRun:
    world = generate_world(config.sim)
    truth = generate_truth(config.sim, world)
    sample = sample_cdr(truth, world, config.sim)
    cells: CoverageMap = world.cells
    observations = calibration_observations(world, sample, config.observations)
    ext = optimize_extensions(cells, observations, config.coverage)
    opt_cells = cells.with_extensions(ext.as_dict())
    trajs = build_trajectories(sample.records, cells)

    proj = cells.projection
    estimates, rows = {}, {}
    for name, cm in (("No-opt", cells.without_extensions()), ("Opt", opt_cells)):
        estimates[name] = estimate_all(trajs, cm, config.skf)
        rows[name] = estimate_rows(estimates[name], proj)
        rows[name + "+MM"] = match_rows(rows[name], world.roads, proj, config.match)
    fixes = [f for t in truth for f in t.fixes]
    report = evaluate(rows, fixes, config.max_skew, config.bin_width)
    return ExperimentRun(world, ext, estimates, rows, report, truth)


def filtered_vs_smoothed_error(run: ExperimentRun, variant: str = "Opt", max_skew: float = 60.0):
    """Mean position error of filtered and smoothed estimates for one variant."""
    from .evaluation import pair_truth

    proj = run.world.cells.projection
    fixes = [f for t in run.truth for f in t.fixes]
    out = []
    for filtered in (True, False):
        rows = estimate_rows(run.estimates[variant], proj, filtered=filtered)
        pairs, _ = pair_truth(rows, fixes, max_skew)
        out.append(float(np.mean([p.error for p in pairs])))
    return tuple(out)
