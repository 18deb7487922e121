from __future__ import annotations

import json
import math
from pathlib import Path

import pytest

from .utils import Runner, file_hashes, read_csv, read_json, read_matrix, write_config

REPO_ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="module")
def runner() -> Runner:
    return Runner(REPO_ROOT)


def test_graph_oracle(runner: Runner, tmp_path: Path):
    out = tmp_path / "graph"
    proc = runner.run(["graph", "--nu", "2", "--height", "1", "--oracle", "--out", str(out)], tmp_path)
    assert proc.returncode == 0, proc.stderr
    summary = read_json(out / "summary.json")
    assert summary["k"] == 5
    assert summary["max_perron_deviation"] <= 1e-10
    oracle = read_json(out / "oracle.json")
    assert oracle["phi_root"] == pytest.approx(2 / 7)
    assert max(oracle["max_deviation"].values()) <= 1e-10
    manifest = read_json(out / "manifest.json")
    names = {f["name"] for f in manifest["files"]}
    assert {"P.csv", "phi.csv", "Q.csv", "E.csv", "d.csv", "laplacian.csv", "summary.json", "oracle.json"} <= names


def test_graph_h2_summary_and_matrices(runner: Runner, tmp_path: Path):
    out = tmp_path / "graph"
    proc = runner.run(["graph", "--nu", "2", "--height", "2", "--doubling", "--embed-alpha", "0.5", "--out", str(out)], tmp_path)
    assert proc.returncode == 0, proc.stderr
    summary = read_json(out / "summary.json")
    assert summary["k"] == 11
    assert summary["diameter"] == pytest.approx(math.log(78), abs=1e-10)
    assert summary["min_gamma_distance"] >= math.log(3) - 1e-12
    assert summary["op_norms"]["P_T"] == pytest.approx(2.0)
    assert summary["layer_phi_bounds_hold"] is True
    assert 2 <= summary["doubling_constant"] <= 11
    d = read_matrix(out / "d.csv")
    assert len(d) == 11 and all(len(row) == 11 for row in d)
    emb = read_json(out / "embedding.json")
    assert emb["distortion"] >= 1.0 and len(emb["coords"]) == 11
    phi = read_csv(out / "phi.csv")
    assert phi[6]["label"] == "r"
    assert float(phi[6]["phi"]) == pytest.approx(8 / 39)


def test_graph_json_format(runner: Runner, tmp_path: Path):
    out = tmp_path / "graph"
    proc = runner.run(["graph", "--nu", "2", "--height", "1", "--format", "json", "--out", str(out)], tmp_path)
    assert proc.returncode == 0, proc.stderr
    P = read_json(out / "P.json")
    assert P["labels"] == ["v1", "v2", "r", "T0", "T1"]
    assert len(P["rows"]) == 5


def test_graph_usage_errors(runner: Runner, tmp_path: Path):
    proc = runner.run(["graph", "--nu", "2"], tmp_path)
    assert proc.returncode == 2
    proc = runner.run(["graph", "--nu", "1", "--height", "2", "--out", str(tmp_path / "g")], tmp_path)
    assert proc.returncode == 2
    assert "ERROR" in proc.stderr


def test_env_var_sets_output_dir(runner: Runner, tmp_path: Path, monkeypatch):
    env_out = tmp_path / "env-out"
    monkeypatch.setattr(runner, "env", lambda: {**Runner.env(runner), "LOOPPROBE_OUT": str(env_out)})
    proc = runner.run(["graph", "--nu", "2", "--height", "1", "--quiet"], tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert (env_out / "graph" / "manifest.json").exists()
    assert proc.stderr == ""


def test_coupon_suite(runner: Runner, tmp_path: Path):
    out = tmp_path / "coupon"
    proc = runner.run(["coupon", str(REPO_ROOT / "configs" / "coupon-small.json"), "--out", str(out)], tmp_path)
    assert proc.returncode == 0, proc.stderr
    rows = read_csv(out / "coupon.csv")
    assert list(rows[0]) == ["n_bar", "estimate", "ci_lo", "ci_hi", "lower", "upper", "sharper", "exact"]
    first = rows[0]
    assert first["n_bar"] == "3"
    assert float(first["exact"]) == pytest.approx(2 / 9)
    assert abs(float(first["estimate"]) - 2 / 9) <= 0.015
    assert float(first["lower"]) == pytest.approx(1 / 9)
    assert float(first["upper"]) == pytest.approx(19 / 27)
    summary = read_json(out / "summary.json")
    assert summary["failures"] == []
    assert summary["guaranteed_horizon"] >= summary["upper_limited_horizon"]
    extremal = read_csv(out / "extremal.csv")
    assert all(r["violations"] == "0" for r in extremal)


def test_coupon_two_coupons(runner: Runner, tmp_path: Path):
    cfg = write_config(tmp_path, "two.json", {"weights": [0.5, 0.5], "horizons": [2], "trials": 20000, "seed": 1})
    proc = runner.run(["coupon", str(cfg), "--format", "json", "--out", str(tmp_path / "c")], tmp_path)
    assert proc.returncode == 0, proc.stderr
    rows = read_json(tmp_path / "c" / "coupon.json")
    assert rows[0]["estimate"] == pytest.approx(0.5, abs=0.02)


def test_coupon_validation_error(runner: Runner, tmp_path: Path):
    cfg = write_config(tmp_path, "bad.json", {"weights": [0.5, 0.5], "horizons": [2], "trials": 0})
    proc = runner.run(["coupon", str(cfg), "--out", str(tmp_path / "c")], tmp_path)
    assert proc.returncode == 2
    assert "trials" in proc.stderr


def test_gap_malformed_config(runner: Runner, tmp_path: Path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    proc = runner.run(["gap", str(bad), "--out", str(tmp_path / "g")], tmp_path)
    assert proc.returncode == 2
    unknown = write_config(tmp_path, "unknown.json", {"nu": 2, "replicates": 3})
    proc = runner.run(["gap", str(unknown), "--out", str(tmp_path / "g")], tmp_path)
    assert proc.returncode == 2


def _tiny_gap(tmp_path: Path) -> Path:
    return write_config(
        tmp_path,
        "tiny.json",
        {"n_grid": [16, 128], "ensemble": 4, "replications": 8, "seed": 0},
    )


def test_gap_outputs(runner: Runner, tmp_path: Path):
    out = tmp_path / "gap"
    proc = runner.run(["gap", str(_tiny_gap(tmp_path)), "--risk-checks", "5", "--concentration-seeds", "5", "--jobs", "1", "--out", str(out)], tmp_path)
    assert proc.returncode == 0, proc.stderr
    rows = read_csv(out / "gap.csv")
    assert list(rows[0]) == ["N", "seed", "gap", "rate_factor", "ratio"]
    assert len(rows) == 16
    summary = read_json(out / "summary.json")
    assert "slope" in summary and summary["risk_checks"] == 5
    checks = read_csv(out / "risk_checks.csv")
    assert all(float(c["gap"]) <= float(c["bound"]) + 1e-12 for c in checks)
    plans = read_csv(out / "plans.csv")
    assert {p["check"] for p in plans} == {"0", "1", "2", "3", "4"}
    for c in range(5):
        assert sum(float(p["mass"]) for p in plans if p["check"] == str(c)) == pytest.approx(1.0, abs=1e-9)
    assert [r["N"] for r in read_csv(out / "concentration.csv")] == ["16", "128"]


def test_gap_seed_determinism(runner: Runner, tmp_path: Path):
    cfg = _tiny_gap(tmp_path)
    hashes = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = runner.run(["gap", str(cfg), "--seed", "7", "--jobs", "2", "--out", str(out)], tmp_path)
        assert proc.returncode == 0, proc.stderr
        h = file_hashes(out)
        h.pop("manifest.json")
        hashes.append(h)
    assert hashes[0] == hashes[1]
    assert read_json(tmp_path / "a" / "summary.json")["seed"] == 7


def test_circuit_trace(runner: Runner, tmp_path: Path):
    out = tmp_path / "circuit"
    proc = runner.run(["circuit", "--nu", "2", "--height", "1", "--prompt", "10", "--steps", "4", "--seed", "1", "--out", str(out)], tmp_path)
    assert proc.returncode == 0, proc.stderr
    trace = read_csv(out / "trace.csv")
    assert [r["t"] for r in trace] == ["0", "1", "2", "3", "4"]
    assert trace[0]["window"] == "10"
    config = read_json(out / "configuration.json")
    assert len(config["configuration"]) == 1
    probe = read_json(out / "probe.json")
    assert list(probe) == ["2"]
    assert sum(probe["2"]) == pytest.approx(1.0)
    assert max(probe["2"]) == pytest.approx(0.8)

    gates = tmp_path / "gates.json"
    gates.write_text(json.dumps(config))
    again = tmp_path / "again"
    proc = runner.run(["circuit", "--nu", "2", "--height", "1", "--prompt", "10", "--steps", "4", "--gates", str(gates), "--out", str(again)], tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert (again / "trace.csv").read_text() == (out / "trace.csv").read_text()


def test_circuit_bad_prompt(runner: Runner, tmp_path: Path):
    proc = runner.run(["circuit", "--prompt", "10a1", "--out", str(tmp_path / "c")], tmp_path)
    assert proc.returncode == 2
    proc = runner.run(["circuit", "--eta", "1.0", "--out", str(tmp_path / "c")], tmp_path)
    assert proc.returncode == 2
    proc = runner.run(["circuit", "--preset", "majority-family", "--out", str(tmp_path / "c")], tmp_path)
    assert proc.returncode == 2


def test_selftest_passes(runner: Runner, tmp_path: Path):
    proc = runner.run(["selftest", "--out", str(tmp_path / "st")], tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert "FAIL" not in proc.stdout
    assert "perron h=2" in proc.stdout
    rows = read_csv(tmp_path / "st" / "selftest.csv")
    assert rows and all(r["passed"] == "true" and r["anchor"] for r in rows)


def test_selftest_injected_fault(runner: Runner, tmp_path: Path):
    proc = runner.run(["selftest", "--inject-fault", "laplacian-sign", "--out", str(tmp_path / "st")], tmp_path)
    assert proc.returncode == 1
    assert "laplacian h=1" in proc.stderr


@pytest.mark.slow
def test_gap_small_config_slope(runner: Runner, tmp_path: Path):
    out = tmp_path / "gap"
    proc = runner.run(["gap", str(REPO_ROOT / "configs" / "gap-small.json"), "--out", str(out)], tmp_path)
    assert proc.returncode == 0, proc.stderr
    summary = read_json(out / "summary.json")
    assert -0.65 <= summary["slope"] <= -0.35
