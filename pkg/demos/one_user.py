"""Follow one simulated user through the switching filter and smoother.

    python3 demos/one_user.py

Prints each CDR event with the true episode, the filtered and smoothed
STAY probability, and the position error of both estimates.
"""
from cdrloc.geo import LocalPoint, haversine
from cdrloc.ingest import build_trajectories
from cdrloc.pipeline import estimate_user
from cdrloc.sim import SimConfig, generate_truth, generate_world, sample_cdr

cfg = SimConfig(seed=1, n_users=1, duration_s=24 * 3600.0)
world = generate_world(cfg)
truth = generate_truth(cfg, world)
sample = sample_cdr(truth, world, cfg)
traj = build_trajectories(sample.records, world.cells)[0]
est = estimate_user(traj, world.cells.without_extensions())
proj = world.cells.projection

truth_at = {r.timestamp: (xy, lab) for r, xy, lab in
            zip(sample.records, sample.positions, sample.labels)}

print(" hh:mm  truth  P(stay) filt/smooth  label  err filt / smooth (m)")
t0 = traj.timestamps[0]
hits = 0
for step, label in zip(est.steps, est.labels):
    xy, true_label = truth_at[int(step.timestamp)]
    where = world.to_geo(xy)[0]
    errs = [haversine(proj.from_local(LocalPoint(*s.mean[:2])), where) for s in (step.filtered, step.smoothed)]
    minutes = int(step.timestamp - t0) // 60
    hits += label == true_label.name
    print(f" {minutes // 60:02d}:{minutes % 60:02d}  {true_label.name:<5}  "
          f"{step.filtered_probs[1]:.2f} / {step.smoothed_probs[1]:.2f}        "
          f"{label:<5}  {errs[0]:6.0f} / {errs[1]:6.0f}")
print(f"\n{hits}/{len(est.steps)} events labelled correctly")
