"""Simulate a small city, calibrate coverage, locate users, score them.

    python3 demos/end_to_end.py [seed]

Everything stays in memory. The `cdrloc run-all` command does the same
through files.
"""
import sys

import numpy as np

from cdrloc.experiment import ExperimentConfig, filtered_vs_smoothed_error, run_experiment
from cdrloc.sim import SimConfig

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
run = run_experiment(ExperimentConfig(sim=SimConfig(seed=seed)))

w, h = run.world.extent_km
n_events = len(run.rows["Opt"])
print(f"world {w:.1f} x {h:.1f} km, {len(run.world.cell_ids)} cells, {n_events} CDR events")

# radius calibration
ext = run.extensions
rep = ext.report
print(f"\ncoverage: penalty {rep.initial_penalty:.3g} -> {rep.final_penalty:.3g} "
      f"in {rep.iterations} iterations")
print(f"covered observations {rep.covered_fraction_before:.3f} -> {rep.covered_fraction_after:.3f}")
print(f"median extension {np.median(ext.extensions):.0f} m on radii of "
      f"{np.median(ext.base_radius):.0f} m")

# stay/move detection
acc = run.report.accuracy
print("\nepisode accuracy      stay   move")
for v in ("No-opt", "Opt"):
    print(f"  {v:<18} {acc[v]['stay']:.3f}  {acc[v]['move']:.3f}")

# position error
print("\nRMSE (m)     " + "  ".join(f"{v:>9}" for v in run.report.rmse["MOVE"]))
for label, row in run.report.rmse.items():
    print(f"  {label:<10} " + "  ".join(f"{x:9.0f}" for x in row.values()))

f, s = filtered_vs_smoothed_error(run)
print(f"\nmean error with extensions: filtered {f:.0f} m, smoothed {s:.0f} m")
