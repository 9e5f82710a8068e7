"""Command-line entry point: ``cdrloc <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import ingest
from .config import PipelineConfig, load_config
from .coverage import ExtensionResult, OptimizationReport, optimize_extensions, read_extensions
from .errors import CdrlocError, ConfigError, EmptyInput
from .evaluation import VARIANTS, evaluate
from .pipeline import (estimate_all, estimate_rows, format_estimates, format_matched,
                       match_rows, parse_estimates, parse_matched)
from .sim import buildings_geojson, generate_truth, generate_world, sample_cdr, sample_observations

log = logging.getLogger("cdrloc")

EXTENSIONS_CSV = "extensions.csv"
OPT_REPORT_JSON = "optimization_report.json"
EVAL_JSON = "eval_report.json"
HISTOGRAM_CSV = "error_histogram.csv"


def _variant_tag(no_opt: bool) -> str:
    return "noopt" if no_opt else "opt"


def estimates_file(no_opt: bool) -> str:
    return f"estimates_{_variant_tag(no_opt)}.csv"


def matched_file(no_opt: bool) -> str:
    return f"matched_{_variant_tag(no_opt)}.csv"


# ------------------------------------------------------------- subcommands

def cmd_simulate(cfg: PipelineConfig, args) -> None:
    world = generate_world(cfg.sim)
    truth = generate_truth(cfg.sim, world)
    sample = sample_cdr(truth, world, cfg.sim)
    campaign, _ = sample_observations(world)
    p = cfg.paths
    ingest.write_text(p.input("coverage"), world.coverage_geojson)
    ingest.write_text(p.input("roads"), world.roads_geojson)
    ingest.write_text(p.input("buildings"), buildings_geojson(world, truth))
    ingest.write_text(p.input("cdr"), ingest.format_cdr(sample.records))
    ingest.write_text(p.input("truth"), ingest.format_truth(f for t in truth for f in t.fixes))
    ingest.write_text(p.input("observations"),
                      ingest.format_observations(campaign + list(sample.observations)))
    log.info("simulated %d users, %d CDR records, %d cells",
             len(truth), len(sample.records), len(world.cell_ids))


def _cells(cfg: PipelineConfig):
    return ingest.parse_coverage(cfg.paths.input("coverage"), shift_factor=cfg.coverage.shift_factor)


def cmd_optimize(cfg: PipelineConfig, args) -> None:
    cells = _cells(cfg)
    obs_path = cfg.paths.input("observations")
    if obs_path.exists():
        observations = ingest.parse_observations(obs_path)
    else:
        log.warning("observations file %s not found; writing zero extensions", obs_path)
        observations = []
    known = [o for o in observations if o.cell_id in cells]
    if len(known) < len(observations):
        log.warning("ignored %d observation(s) on unknown cells", len(observations) - len(known))
    if known:
        result = optimize_extensions(cells, known, cfg.coverage)
    else:
        result = _zero_extensions(cells)
    ingest.write_text(cfg.paths.output(EXTENSIONS_CSV), result.to_csv())
    ingest.write_text(cfg.paths.output(OPT_REPORT_JSON), result.report.to_json())
    log.info("covered fraction %.3f -> %.3f", result.report.covered_fraction_before,
             result.report.covered_fraction_after)


def _zero_extensions(cells) -> ExtensionResult:
    import numpy as np

    ids = list(cells)
    base = np.array([cells[c].base_radius for c in ids], dtype=float)
    report = OptimizationReport(
        initial_penalty=0.0, final_penalty=0.0, iterations=0, gradient_norm=0.0,
        covered_fraction_before=float("nan"), covered_fraction_after=float("nan"),
        n_cells=len(ids), n_observations=0, converged=True, message="no observations", trace=[0.0])
    return ExtensionResult(ids, base, np.zeros(len(ids)), report)


def _read_cdr(path: Path):
    try:
        return ingest.parse_cdr(path)
    except EmptyInput:
        log.warning("CDR file %s is empty", path)
        return []


def cmd_estimate(cfg: PipelineConfig, args, no_opt: bool | None = None) -> None:
    no_opt = args.no_opt if no_opt is None else no_opt
    cells = _cells(cfg)
    if not no_opt:
        ext_path = cfg.paths.output(EXTENSIONS_CSV)
        if ext_path.exists():
            cells = cells.with_extensions(read_extensions(ext_path))
        else:
            log.warning("extensions file %s not found; using base radii", ext_path)
    trajs = ingest.build_trajectories(_read_cdr(cfg.paths.input("cdr")), cells)
    estimates = estimate_all(trajs, cells, cfg.skf, cfg.jobs)
    rows = estimate_rows(estimates, cells.projection, filtered=args.filtered)
    ingest.write_text(cfg.paths.output(estimates_file(no_opt)), format_estimates(rows))
    log.info("estimated %d events for %d users", len(rows), len(estimates))


def cmd_match(cfg: PipelineConfig, args, no_opt: bool | None = None) -> None:
    no_opt = args.no_opt if no_opt is None else no_opt
    cells = _cells(cfg)
    net = ingest.parse_roads(cfg.paths.input("roads"), cells.projection)
    buildings = None
    if cfg.match.match_stay_buildings:
        buildings = ingest.parse_buildings(cfg.paths.input("buildings"), cells.projection)
    rows = parse_estimates(cfg.paths.output(estimates_file(no_opt)))
    matched = match_rows(rows, net, cells.projection, cfg.match, buildings)
    ingest.write_text(cfg.paths.output(matched_file(no_opt)), format_matched(matched))
    log.info("matched %d of %d points", sum(m.status == "MATCHED" for m in matched), len(matched))


def cmd_evaluate(cfg: PipelineConfig, args) -> None:
    truth = ingest.parse_truth(cfg.paths.input("truth"))
    variants = {}
    for name in VARIANTS:
        no_opt = name.startswith("No-opt")
        if name.endswith("+MM"):
            path = cfg.paths.output(matched_file(no_opt))
            if path.exists():
                variants[name] = parse_matched(path)
        else:
            path = cfg.paths.output(estimates_file(no_opt))
            if path.exists():
                variants[name] = parse_estimates(path)
    report = evaluate(variants, truth, cfg.eval.max_skew, cfg.eval.bin_width)
    ingest.write_text(cfg.paths.output(EVAL_JSON), report.to_json())
    ingest.write_text(cfg.paths.output(HISTOGRAM_CSV), report.histogram_csv())
    for label in ("MOVE", "STAY"):
        ingest.write_text(cfg.paths.output(f"errors_{label.lower()}.dat"),
                          report.gnuplot_columns(label))
    for v in ("No-opt", "Opt"):
        a = report.accuracy[v]
        log.info("%s: stay accuracy %s, move accuracy %s", v, _fmt(a["stay"]), _fmt(a["move"]))


def _fmt(x):
    return "n/a" if x is None else f"{x:.3f}"


def cmd_run_all(cfg: PipelineConfig, args) -> None:
    cmd_simulate(cfg, args)
    cmd_optimize(cfg, args)
    for no_opt in (True, False):
        cmd_estimate(cfg, args, no_opt)
        cmd_match(cfg, args, no_opt)
    cmd_evaluate(cfg, args)


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "estimate": cmd_estimate,
    "match": cmd_match,
    "evaluate": cmd_evaluate,
    "run-all": cmd_run_all,
}


# -------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field, e.g. skf.threshold=0.6 (repeatable)")
    common.add_argument("--seed", type=int, help="simulator seed (same as --set sim.seed=N)")
    common.add_argument("--jobs", type=int, help="parallel workers for per-user estimation")
    common.add_argument("--no-opt", action="store_true", help="ignore radius extensions")
    common.add_argument("--filtered", action="store_true",
                        help="write filtered instead of smoothed positions")
    common.add_argument("--match-stay-buildings", action="store_true",
                        help="snap STAY points to the nearest building centroid")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="cdrloc", description="Locate mobile users from sparse CDR data.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "simulate": "write a synthetic world, truth track, CDR and observations",
        "optimize": "learn per-cell radius extensions from observations",
        "estimate": "run the switching Kalman filter and smoother per user",
        "match": "snap MOVE estimates to the road network",
        "evaluate": "score estimates against GPS truth",
        "run-all": "simulate, optimize, estimate, match and evaluate",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _resolve_config(args) -> PipelineConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"sim.seed={args.seed}")
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    if args.match_stay_buildings:
        overrides.append("match.match_stay_buildings=true")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"cdrloc: config error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](cfg, args)
    except (CdrlocError, OSError, ValueError) as exc:
        print(f"cdrloc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
