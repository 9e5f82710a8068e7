import json
import subprocess
import sys

import pytest

from cdrloc.cli import main
from cdrloc.config import PipelineConfig, load_config
from cdrloc.errors import ConfigError
from cdrloc.pipeline import parse_estimates, parse_matched

SMALL = ["--set", "sim.n_users=2", "--set", "sim.duration_s=43200", "--set", "sim.n_cells=16"]


def run(tmp_path, *args):
    base = ["--set", f"paths.data_dir={tmp_path / 'data'}", "--set", f"paths.out_dir={tmp_path / 'out'}"]
    cmd, rest = args[0], list(args[1:])
    return main([cmd, *base, *SMALL, "-q", *rest])


def read_all(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir())}


# ------------------------------------------------------------------ config

def test_defaults_match_stated_constants():
    cfg = PipelineConfig()
    assert cfg.coverage.weight == 10.0
    assert cfg.skf.stay_prob == 0.8
    assert cfg.skf.q_move == 0.5 and cfg.skf.q_stay == 0.1
    assert cfg.match.radius == 2000.0 and cfg.match.policy == "EXPAND"
    assert cfg.eval.max_skew == 60.0 and cfg.eval.bin_width == 500.0


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"skf": {"threshold": 0.6}, "sim": {"move_speed": [2, 3]}}))
    cfg = load_config(path, ["skf.threshold=0.7", "match.policy=STRICT"])
    assert cfg.skf.threshold == 0.7
    assert cfg.sim.move_speed == (2.0, 3.0)
    assert cfg.match.policy == "STRICT"


@pytest.mark.parametrize("override, field", [
    ("coverage.weight=0", "coverage.weight"),
    ("skf.stay_prob=1.0", "skf.stay_prob"),
    ("skf.stay_prob=0", "skf.stay_prob"),
    ("skf.bogus=1", "skf.bogus"),
    ("sim.n_users=x", "sim.n_users"),
    ("match.policy=NEAREST", "match.policy"),
])
def test_invalid_fields_name_their_path(override, field):
    with pytest.raises(ConfigError) as exc:
        load_config(None, [override])
    assert str(exc.value).startswith(field)


def test_bad_json_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


# --------------------------------------------------------------------- cli

def test_invalid_config_exits_2(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--set", "coverage.weight=-1") == 2
    assert "coverage.weight" in capsys.readouterr().err


def test_usage_error_exits_2():
    assert main(["frobnicate"]) == 2


def test_simulate_creates_dirs_and_is_deterministic(tmp_path):
    assert run(tmp_path / "a", "simulate") == 0
    assert run(tmp_path / "b", "simulate") == 0
    a, b = read_all(tmp_path / "a" / "data"), read_all(tmp_path / "b" / "data")
    assert set(a) == {"buildings.geojson", "cdr.csv", "coverage.geojson", "observations.csv",
                      "roads.geojson", "truth.csv"}
    assert a == b
    assert run(tmp_path / "c", "simulate", "--seed", "5") == 0
    assert read_all(tmp_path / "c" / "data")["cdr.csv"] != a["cdr.csv"]


def test_optimize_without_observations(tmp_path, capsys):
    assert run(tmp_path, "simulate") == 0
    (tmp_path / "data" / "observations.csv").unlink()
    assert main(["optimize", "--set", f"paths.data_dir={tmp_path / 'data'}",
                 "--set", f"paths.out_dir={tmp_path / 'out'}", *SMALL]) == 0
    lines = (tmp_path / "out" / "extensions.csv").read_text().splitlines()
    assert all(line.endswith(",0.0") for line in lines[1:])
    assert "not found" in capsys.readouterr().err


def test_optimize_covers_and_reruns_identically(tmp_path):
    assert run(tmp_path, "simulate") == 0
    assert run(tmp_path, "optimize") == 0
    first = read_all(tmp_path / "out")
    report = json.loads(first["optimization_report.json"])
    assert report["covered_fraction_after"] >= 0.95
    assert report["final_penalty"] <= report["initial_penalty"]
    assert run(tmp_path, "optimize") == 0
    assert read_all(tmp_path / "out") == first


def test_estimate_flags(tmp_path):
    assert run(tmp_path, "simulate") == 0
    assert run(tmp_path, "optimize") == 0
    assert run(tmp_path, "estimate") == 0
    opt = (tmp_path / "out" / "estimates_opt.csv").read_bytes()
    # --no-opt ignores the extensions file
    assert run(tmp_path, "estimate", "--no-opt") == 0
    noopt = (tmp_path / "out" / "estimates_noopt.csv").read_bytes()
    (tmp_path / "out" / "extensions.csv").unlink()
    assert run(tmp_path, "estimate", "--no-opt") == 0
    assert (tmp_path / "out" / "estimates_noopt.csv").read_bytes() == noopt
    assert opt != noopt
    # --filtered swaps the position columns but keeps the probabilities
    smoothed = parse_estimates(tmp_path / "out" / "estimates_noopt.csv")
    assert run(tmp_path, "estimate", "--no-opt", "--filtered") == 0
    filtered = parse_estimates(tmp_path / "out" / "estimates_noopt.csv")
    assert [r.p_stay_smoothed for r in smoothed] == [r.p_stay_smoothed for r in filtered]
    assert [r.lat for r in smoothed] != [r.lat for r in filtered]


def test_estimate_jobs_do_not_change_output(tmp_path):
    assert run(tmp_path, "simulate") == 0
    assert run(tmp_path, "estimate", "--no-opt") == 0
    one = (tmp_path / "out" / "estimates_noopt.csv").read_bytes()
    assert run(tmp_path, "estimate", "--no-opt", "--jobs", "2") == 0
    assert (tmp_path / "out" / "estimates_noopt.csv").read_bytes() == one


def test_empty_cdr_gives_empty_output(tmp_path):
    assert run(tmp_path, "simulate") == 0
    (tmp_path / "data" / "cdr.csv").write_text("")
    assert run(tmp_path, "estimate", "--no-opt") == 0
    text = (tmp_path / "out" / "estimates_noopt.csv").read_text()
    assert text == "imsi,timestamp,cell_id,lat,lon,p_stay_filtered,p_stay_smoothed,label\n"
    assert run(tmp_path, "match", "--no-opt") == 0
    assert len(parse_matched(tmp_path / "out" / "matched_noopt.csv")) == 0


def test_match_policies(tmp_path):
    assert run(tmp_path, "simulate") == 0
    assert run(tmp_path, "estimate", "--no-opt") == 0
    assert run(tmp_path, "match", "--no-opt") == 0
    rows = parse_matched(tmp_path / "out" / "matched_noopt.csv")
    assert sum(r.status == "MATCHED" for r in rows) == sum(r.label == "MOVE" for r in rows)
    assert all(r.status == "UNMATCHED" for r in rows if r.label == "STAY")
    assert run(tmp_path, "match", "--no-opt", "--match-stay-buildings") == 0
    rows = parse_matched(tmp_path / "out" / "matched_noopt.csv")
    stays = [r for r in rows if r.label == "STAY"]
    assert stays and all(r.segment_id.startswith("building:") for r in stays)
    assert run(tmp_path, "match", "--no-opt", "--set", "match.policy=STRICT",
               "--set", "match.radius=1") == 0
    rows = parse_matched(tmp_path / "out" / "matched_noopt.csv")
    assert all(r.status == "UNMATCHED" for r in rows)


def test_evaluate_missing_variant_exits_1(tmp_path):
    assert run(tmp_path, "simulate") == 0
    assert run(tmp_path, "estimate", "--no-opt") == 0
    assert run(tmp_path, "evaluate") == 1


def test_run_all_outputs(tmp_path):
    assert run(tmp_path, "run-all") == 0
    out = read_all(tmp_path / "out")
    assert set(out) == {"error_histogram.csv", "errors_move.dat", "errors_stay.dat",
                        "estimates_noopt.csv", "estimates_opt.csv", "eval_report.json",
                        "extensions.csv", "matched_noopt.csv", "matched_opt.csv",
                        "optimization_report.json"}
    report = json.loads(out["eval_report.json"])
    assert set(report["rmse"]["MOVE"]) == {"No-opt", "Opt", "No-opt+MM", "Opt+MM"}


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cdrloc", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "run-all" in proc.stdout
