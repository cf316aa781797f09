import csv
import io
import json

import numpy as np
import pytest
from click.testing import CliRunner

from onelayer.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    return result


def test_gen_writes_teacher_and_samples(tmp_path, runner):
    out = tmp_path / "teacher.json"
    res = invoke(runner, ["gen", "--d", "6", "--k", "3", "--kappa", "2", "--seed", "4",
                          "--out", str(out), "--n", "25"])
    assert res.exit_code == 0
    doc = json.loads(out.read_text())
    assert doc["d"] == 6 and doc["k"] == 3
    samples = out.with_suffix(".samples.csv")
    assert samples.exists()
    with open(samples, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][-1] == "y"
    assert len(rows) == 26


def test_init_command_json(tmp_path, runner):
    out = tmp_path / "teacher.json"
    invoke(runner, ["gen", "--d", "6", "--k", "2", "--kappa", "2", "--seed", "4", "--out", str(out)])
    res = invoke(runner, ["init", "--teacher", str(out), "--n", "4000", "--seed", "7"])
    assert res.exit_code == 0
    doc = json.loads(res.output[res.output.index("{"):])
    assert "W0" in doc and "diagnostics" in doc
    assert len(doc["W0"]) == 6


def test_init_command_exact_moments(tmp_path, runner):
    out = tmp_path / "teacher.json"
    invoke(runner, ["gen", "--d", "5", "--k", "2", "--kappa", "2", "--seed", "4", "--out", str(out)])
    dest = tmp_path / "init.json"
    res = invoke(runner, ["init", "--teacher", str(out), "--n", "10", "--seed", "7",
                          "--exact-moments", "--out", str(dest)])
    assert res.exit_code == 0
    doc = json.loads(dest.read_text())
    W0 = np.asarray(doc["W0"])
    teacher = json.loads(out.read_text())
    # exact moments recover the teacher columns up to permutation
    W = np.asarray(teacher["W"])
    diffs = [min(np.linalg.norm(W0[:, j] - W[:, i]) for j in range(2)) for i in range(2)]
    assert max(diffs) < 1e-5


def test_train_command(tmp_path, runner, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "teacher.json"
    invoke(runner, ["gen", "--d", "6", "--k", "2", "--kappa", "2", "--seed", "4", "--out", str(out)])
    res = invoke(runner, ["train", "--teacher", str(out), "--n", "4000", "--init", "tensor",
                          "--eta", "0.05", "--iters", "200", "--seed", "3",
                          "--out-prefix", "run"])
    assert res.exit_code == 0
    report = json.loads((tmp_path / "run.json").read_text())
    assert report["success"] in (True, False)
    with open(tmp_path / "run_trace.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "rel_err", "risk"]
    assert (tmp_path / "run_risk.png").stat().st_size > 0


def test_train_command_oracle_v(tmp_path, runner, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "teacher.json"
    invoke(runner, ["gen", "--d", "5", "--k", "2", "--kappa", "2", "--seed", "4", "--out", str(out)])
    res = invoke(runner, ["train", "--teacher", str(out), "--n", "3000", "--init", "oracle-v",
                          "--eta", "0.05", "--iters", "50", "--seed", "3",
                          "--out-prefix", "orc"])
    assert res.exit_code == 0


def test_hessian_command(tmp_path, runner):
    out = tmp_path / "teacher.json"
    invoke(runner, ["gen", "--d", "5", "--k", "2", "--kappa", "2", "--seed", "4", "--out", str(out)])
    res = invoke(runner, ["hessian", "--teacher", str(out), "--n", "5000", "--offset", "0.05",
                          "--seed", "2"])
    assert res.exit_code == 0
    doc = json.loads(res.output)
    assert doc["lambda_min"] <= doc["lambda_max"]
    assert abs(doc["distance"] - 0.05) < 1e-9


def test_rho_command_table(runner):
    res = invoke(runner, ["rho", "--activation", "relu", "--sigma", "0.5,1"])
    assert res.exit_code == 0
    rows = list(csv.reader(io.StringIO(res.output)))
    assert rows[0][0] == "quantity"
    table = {r[0]: [float(x) for x in r[1:]] for r in rows[1:]}
    assert abs(table["alpha0"][0] - 0.5) < 1e-9
    assert abs(table["rho"][1] - 0.091) < 1e-2


def test_grid_recovery_command_and_exit_codes(tmp_path, runner, monkeypatch):
    monkeypatch.setenv("ONELAYER_WORKERS", "1")
    cfg = {
        "d_values": [4], "n_values": [500], "k": 2, "kappa": 2.0, "trials": 2,
        "master_seed": 5, "eta": 0.05, "iters": 80,
        "out_dir": str(tmp_path / "run"),
        "thresholds": {"min_rate": [{"d": 4, "n": 500, "value": 0.0}]},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    res = invoke(runner, ["grid", "recovery", str(path)])
    assert res.exit_code == 0

    cfg["thresholds"] = {"min_rate": [{"d": 4, "n": 500, "value": 1.1}]}
    cfg["out_dir"] = str(tmp_path / "run2")
    path.write_text(json.dumps(cfg))
    res = runner.invoke(main, ["grid", "recovery", str(path)])
    assert res.exit_code == 1
    assert "THRESHOLD VIOLATED" in res.output


def test_grid_init_command(tmp_path, runner, monkeypatch):
    monkeypatch.setenv("ONELAYER_WORKERS", "1")
    cfg = {
        "d_values": [4], "n_values": [400, 800], "k": 2, "kappa": 2.0, "trials": 2,
        "master_seed": 5, "out_dir": str(tmp_path / "run"), "thresholds": {},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    res = invoke(runner, ["grid", "init", str(path)])
    assert res.exit_code == 0
    assert (tmp_path / "run" / "init_mean.csv").exists()


def test_grid_convergence_command(tmp_path, runner, monkeypatch):
    monkeypatch.setenv("ONELAYER_WORKERS", "1")
    cfg = {
        "d_values": [6], "n_values": [3000], "k": 2, "kappa": 2.0, "trials": 1,
        "master_seed": 2, "eta": 0.05, "iters": 300,
        "out_dir": str(tmp_path / "run"),
        "thresholds": {"first_to": 1e-6, "tensor_fastest": True, "loglinear_r2": 0.9},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    res = invoke(runner, ["grid", "convergence", str(path)])
    assert res.exit_code == 0, res.output
