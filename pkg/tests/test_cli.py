import csv
import json
import os
import subprocess
import sys

import pytest

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")
COSINE = os.path.join(CONFIGS, "cosine.json")
CONSTANT = os.path.join(CONFIGS, "constant.json")


def run_cli(*argv, env=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run([sys.executable, "-m", "branchlab.cli"] + list(argv),
                          capture_output=True, text=True, env=full_env)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_eig_writes_csv_and_sidecar(tmp_path):
    out = tmp_path / "eig"
    r = run_cli("eig", "--media", COSINE, "--grid", "64",
                "--zeta", "0", "--zeta", "0.5", "--out", str(out))
    assert r.returncode == 0, r.stderr
    rows = read_csv(out / "eig.csv")
    assert rows[0] == ["zeta0", "mu", "residual", "residual_star"]
    assert len(rows) == 3
    side = json.loads((out / "eig.json").read_text())
    assert side["command"] == "eig"
    assert side["parameters"]["zeta"] == [[0.0], [0.5]]
    assert "media_hash" in side
    assert side["outputs"] == ["eig.csv"]
    # mu increases with the tilt for this even medium
    assert float(rows[2][1]) > float(rows[1][1])


def test_rerun_is_byte_identical(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        r = run_cli("homog", "--media", COSINE, "--grid", "48",
                    "--zeta", "0.3", "--out", str(out))
        assert r.returncode == 0, r.stderr
    assert (out_a / "homog.csv").read_bytes() == (out_b / "homog.csv").read_bytes()
    assert (out_a / "homog.json").read_bytes() == (out_b / "homog.json").read_bytes()


def test_rate_negative_velocity_and_summary(tmp_path):
    out = tmp_path / "rate"
    r = run_cli("rate", "--media", CONSTANT, "--grid", "32",
                "--v=-1", "--v", "0", "--v", "1", "--out", str(out))
    assert r.returncode == 0, r.stderr
    rows = read_csv(out / "rate.csv")
    assert len(rows) == 4
    vals = {float(row[0]): float(row[1]) for row in rows[1:]}
    assert set(vals) == {-1.0, 0.0, 1.0}


def test_gamma_csv_columns(tmp_path):
    out = tmp_path / "gamma"
    r = run_cli("gamma", "--media", CONSTANT, "--grid", "32",
                "--kmax", "2", "--vmin", "-1", "--vmax", "1",
                "--vcount", "9", "--gamma1-nodes", "65",
                "--relative", "--out", str(out))
    assert r.returncode == 0, r.stderr
    rows = read_csv(out / "gamma.csv")
    assert rows[0] == ["v0", "k", "gamma_k", "gap",
                       "argsup_w0", "argsup_u", "boundary_flag"]
    assert len(rows) == 1 + 9 * 2
    regions = read_csv(out / "regions.csv")
    assert regions[0] == ["v0", "in_G1", "in_G2"]
    assert len(regions) == 10
    side = json.loads((out / "gamma.json").read_text())
    assert side["summary"]["nesting_violations"] == 0
    assert len(side["summary"]["inner_radius"]) == 2


def test_sim_csv_rows(tmp_path):
    out = tmp_path / "sim"
    r = run_cli("sim", "--media", CONSTANT, "--times", "0.5,1.0",
                "--dt", "5e-3", "--replicas", "50", "--seed", "4",
                "--target", "total", "--target", "cube:0",
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    rows = read_csv(out / "sim.csv")
    # 2 times x 2 targets x 3 powers
    assert len(rows) == 1 + 12
    labels = {row[1] for row in rows[1:]}
    assert labels == {"total", "cube@0"}


def test_validate_pass_stdout(tmp_path):
    out = tmp_path / "val"
    r = run_cli("validate", "--media", CONSTANT, "--suite", "duality",
                "--suite", "moments", "--seed", "0", "--out", str(out))
    assert r.returncode == 0, r.stderr
    assert r.stdout.strip().endswith("PASS")
    report = json.loads((out / "validate.json").read_text())
    assert report["ok"] is True
    assert set(report["suites"]) == {"duality", "moments"}
    for body in report["suites"].values():
        assert body["ok"] is True
        assert all(c["ok"] for c in body["checks"])


def test_missing_media_file_is_usage_error(tmp_path):
    r = run_cli("eig", "--media", str(tmp_path / "nope.json"),
                "--out", str(tmp_path / "o"))
    assert r.returncode == 2
    assert "cannot read media config" in r.stderr


def test_bad_flag_value_is_usage_error(tmp_path):
    r = run_cli("sim", "--media", CONSTANT, "--times", "0.5",
                "--target", "sphere:0", "--out", str(tmp_path / "o"))
    assert r.returncode == 2
    assert "target" in r.stderr


def test_runtime_failure_exit_code(tmp_path):
    # unreachable velocity: the Legendre solver escapes its tilt box
    r = run_cli("rate", "--media", CONSTANT, "--grid", "32",
                "--v", "50", "--out", str(tmp_path / "o"))
    assert r.returncode == 1
    assert "error" in r.stderr


def test_kernel_command_ratio_near_one(tmp_path):
    out = tmp_path / "kern"
    r = run_cli("kernel", "--media", CONSTANT, "--grid", "32",
                "--times", "4", "--ys", "0,1", "--cells", "16",
                "--dt", "5e-3", "--out", str(out))
    assert r.returncode == 0, r.stderr
    rows = read_csv(out / "kernel.csv")
    assert rows[0][:2] == ["t", "y"]
    ratios = [float(row[4]) for row in rows[1:]]
    assert all(abs(x - 1.0) < 5e-2 for x in ratios)
