import csv
import json

import numpy as np
import pytest

from iodcbf.cli import main
from iodcbf.data import TrajectoryDataset
from iodcbf.geometry import Polytope


def run(*argv):
    return main([str(a) for a in argv])


def write_config(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("generate-data", "--out", out) == 0
    assert run("build-model", "--out", out) == 0
    assert run("invariant-set", "--out", out) == 0
    return out


def test_pipeline_artifacts(pipeline):
    for name in ("dataset.csv", "pe_report.json", "model.json", "safe_set.json",
                 "invariant_report.json", "projection_2d.csv", "projection_3d.csv",
                 "manifest.json"):
        assert (pipeline / name).exists(), name
    pe = json.loads((pipeline / "pe_report.json").read_text())
    assert pe["stacked_rank"] == 10
    rep = json.loads((pipeline / "invariant_report.json").read_text())
    assert rep["converged"]
    header = (pipeline / "projection_2d.csv").read_text().splitlines()[0]
    assert header == "y0[t-1],y0[t-2]"


def test_manifest_provenance(pipeline):
    manifest = json.loads((pipeline / "manifest.json").read_text())
    assert set(manifest) >= {"schema_hash", "generate-data", "build-model", "invariant-set"}
    assert manifest["generate-data"]["seed"] == 0
    assert "dataset.csv" in manifest["generate-data"]["files"]


def test_simulate_and_summary(pipeline, tmp_path):
    scen = write_config(tmp_path / "s.json", {"scenario": {"schedule": [
        {"start": 0, "end": 300, "kind": "random", "hold_steps": 20, "amplitude": 1.5, "seed": 0}]}})
    assert run("simulate", "--out", pipeline, "--scenario", scen, "--lambda-min", 0.01) == 0
    summary = json.loads((pipeline / "summary.json").read_text())
    assert summary["steps"] == 300 and summary["infeasible_count"] == 0
    assert summary["max_abs_y"] <= 1 + 1e-8 and summary["min_h"] >= -1e-8
    rows = list(csv.DictReader(open(pipeline / "simlog.csv")))
    assert len(rows) == 300
    assert all(float(r["lambda"]) >= 0.01 - 1e-12 for r in rows)


def test_simulate_is_deterministic(pipeline, tmp_path):
    blobs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        out.mkdir()
        for name in ("model.json", "safe_set.json"):
            (out / name).write_bytes((pipeline / name).read_bytes())
        assert run("simulate", "--out", out, "--seed", 3, "--steps", 150) == 0
        blobs.append((out / "simlog.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_regenerated_data_is_identical(pipeline, tmp_path):
    assert run("generate-data", "--out", tmp_path) == 0
    assert (tmp_path / "dataset.csv").read_bytes() == (pipeline / "dataset.csv").read_bytes()


def test_verify_passes(pipeline, capsys):
    assert run("verify", "--out", pipeline, "--samples", 150) == 0
    rep = json.loads((pipeline / "verification.json").read_text())
    assert rep["passed"]
    assert "PASS" in capsys.readouterr().out


def test_verify_flags_tightened_set(pipeline, tmp_path):
    s = Polytope.load(pipeline / "safe_set.json")
    rhs = s.rhs.copy()
    rhs[0] -= 0.5
    Polytope(s.lhs, rhs).save(tmp_path / "bad.json")
    code = run("verify", "--out", tmp_path, "--model", pipeline / "model.json",
               "--set", tmp_path / "bad.json", "--samples", 150)
    assert code == 3


def test_filter_batch(pipeline, tmp_path):
    src = tmp_path / "in.csv"
    with open(src, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"xi_{i}" for i in range(10)] + ["ul_0"])
        w.writerow([0.0] * 10 + [2.0])
    code = run("filter-batch", src, "--out", pipeline, "--output", tmp_path / "f.csv")
    assert code == 0
    row = next(csv.DictReader(open(tmp_path / "f.csv")))
    assert row["status"] == "Optimal" and float(row["u_0"]) == pytest.approx(1.0)


def test_short_dataset_is_validation_error(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"dataset_length": 3})
    assert run("generate-data", "--config", cfg, "--out", tmp_path) == 2


def test_unknown_config_key_is_validation_error(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"dataset_len": 3})
    assert run("generate-data", "--config", cfg, "--out", tmp_path) == 2


def test_missing_input_is_validation_error(tmp_path):
    assert run("build-model", "--out", tmp_path) == 2


def test_noisy_dataset_is_numerical_error(pipeline, tmp_path):
    ds = TrajectoryDataset.from_csv(pipeline / "dataset.csv")
    rng = np.random.default_rng(0)
    TrajectoryDataset(ds.inputs, ds.outputs + 1e-3 * rng.standard_normal(ds.outputs.shape)).to_csv(
        tmp_path / "dataset.csv")
    assert run("build-model", "--out", tmp_path) == 3


def test_non_convergence_exit_code(pipeline, tmp_path):
    cfg = write_config(tmp_path / "c.json", {"invariant_set": {"max_iter": 2}})
    code = run("invariant-set", "--config", cfg, "--out", tmp_path,
               "--model", pipeline / "model.json")
    assert code == 4
    assert (tmp_path / "safe_set.json").exists()


def test_build_model_at_lag(pipeline, tmp_path):
    assert run("build-model", "--out", tmp_path, "--dataset", pipeline / "dataset.csv",
               "--t-ini", 4) == 0
    assert json.loads((tmp_path / "model.json").read_text())["t_ini"] == 4


def test_outside_initial_state_rejected(pipeline, tmp_path):
    s = Polytope.load(pipeline / "safe_set.json")
    # a set that excludes the origin
    Polytope(np.vstack([s.lhs, np.eye(1, 10, 9) * -1.0]), np.append(s.rhs, -0.5)).save(
        tmp_path / "far.json")
    code = run("simulate", "--out", tmp_path, "--model", pipeline / "model.json",
               "--set", tmp_path / "far.json", "--steps", 5)
    assert code == 2
