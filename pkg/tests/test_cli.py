import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from abcring.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


def run(tmp_path, *argv, name="out"):
    return main([*argv, "--out", str(tmp_path / name)])


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "# schema=1"
    return list(csv.reader(lines[1:]))


def manifest(tmp_path, name="out"):
    return json.loads((tmp_path / name / "manifest.json").read_text())


def test_gap_examples(tmp_path):
    assert run(tmp_path, "gap", "--N", "3", "--beta", "0", "--graph", "ring,complete") == EXIT_OK
    rows = read_csv(tmp_path / "out" / "gaps.csv")
    assert rows[0][:4] == ["N", "beta", "graph", "gap"]
    gaps = {r[2]: float(r[3]) for r in rows[1:]}
    assert gaps["ring"] == pytest.approx(3.0, abs=1e-10)
    assert gaps["complete"] == pytest.approx(1.0, abs=1e-10)
    m = manifest(tmp_path)
    assert m["experiment"] == "gap" and m["seed"] == 0 and "gaps.csv" in m["files"]
    assert (tmp_path / "out" / "plot_gaps.py").exists()


def test_gap_rejects_bad_size(tmp_path, capsys):
    assert run(tmp_path, "gap", "--N", "4") == EXIT_USAGE
    assert "multiple of 3" in capsys.readouterr().err


def test_gap_partial_failure_keeps_going(tmp_path, capsys):
    rc = run(tmp_path, "gap", "--N", "3,18", "--budget-gib", "0.01")
    assert rc == EXIT_NUMERIC
    assert "N=18" in capsys.readouterr().err
    rows = read_csv(tmp_path / "out" / "gaps.csv")
    assert [r[0] for r in rows[1:]] == ["3"]


def test_refuses_overwrite(tmp_path):
    assert run(tmp_path, "gap", "--N", "3") == EXIT_OK
    assert run(tmp_path, "gap", "--N", "3") == EXIT_USAGE
    assert run(tmp_path, "gap", "--N", "3", "--force") == EXIT_OK


def test_usage_errors(tmp_path):
    assert run(tmp_path, "scaling", "--N", "6,9") == EXIT_USAGE
    assert run(tmp_path, "gap", "--beta", "-1", name="b") == EXIT_USAGE
    assert run(tmp_path, "interchange", "--oracle", "bogus", name="c") == EXIT_USAGE
    assert run(tmp_path, "gap", "--seed", "-3", name="d") == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == EXIT_USAGE


def test_config_layering(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[gap]\nN = 3,6\nbeta = 1.0\nseed = 7\n")
    assert run(tmp_path, "gap", "--config", str(cfg), "--beta", "2") == EXIT_OK
    m = manifest(tmp_path)
    assert m["parameters"]["N"] == [3, 6]
    assert m["parameters"]["beta"] == [2.0]  # the flag wins over the file
    assert m["seed"] == 7
    assert run(tmp_path, "gap", "--config", str(tmp_path / "missing.ini"), name="x") == EXIT_USAGE


def test_scaling_beta0(tmp_path):
    assert run(tmp_path, "scaling", "--N", "3,6,9,12") == EXIT_OK
    rec = manifest(tmp_path)["result"]
    assert -2.6 < rec["slope"] < -1.4
    rows = read_csv(tmp_path / "out" / "scaling.csv")
    assert len(rows) == 5


def test_minimizer_command(tmp_path):
    assert run(tmp_path, "minimizer", "--beta", "5,15") == EXIT_OK
    recs = manifest(tmp_path)["result"]["minimizers"]
    assert recs[0]["nontrivial"] is False
    assert recs[1]["period_residual"] < 1e-8
    data = json.loads((tmp_path / "out" / "minimizer_beta15.json").read_text())
    assert set(data) == {"beta", "period_residual", "means", "product", "free_energy", "amplitude"}
    assert (tmp_path / "out" / "profile_beta15.csv").read_text().startswith("# schema=1")


def test_hydro_command(tmp_path):
    assert run(tmp_path, "hydro", "--beta", "12", "--M", "64", "--T", "0.5") == EXIT_OK
    rec = manifest(tmp_path)["result"]
    assert rec["max_mass_step_drift"] < 1e-12
    assert rec["max_free_energy_increase"] <= 1e-8
    assert run(tmp_path, "hydro", "--scheme", "explicit", "--dt", "0.1", "--M", "64", name="cfl") == EXIT_USAGE


def test_sample_deterministic(tmp_path):
    args = ["sample", "--N", "6", "--beta", "3", "--T", "2000", "--burn-in", "10", "--seed", "42"]
    assert main([*args, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main([*args, "--out", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "trajectory_r0.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory_r0.csv").read_bytes()
    assert main([*args[:-1], "43", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert a != (tmp_path / "c" / "trajectory_r0.csv").read_bytes()


def test_sample_workers_preserve_order(tmp_path):
    args = ["sample", "--N", "6", "--T", "500", "--burn-in", "10", "--replicas", "2", "--seed", "1"]
    assert main([*args, "--out", str(tmp_path / "serial")]) == EXIT_OK
    assert main([*args, "--workers", "2", "--out", str(tmp_path / "pool")]) == EXIT_OK
    for r in range(2):
        name = f"trajectory_r{r}.csv"
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "pool" / name).read_bytes()


def test_lln_command_small(tmp_path):
    rc = run(tmp_path, "lln", "--N", "30", "--beta", "0", "--T", "20000", "--burn-in", "1000", "--sample-dt", "10")
    assert rc == EXIT_OK
    rep = manifest(tmp_path)["result"]["reports"][0]
    assert rep["modulus"]["mean"] < 3 / np.sqrt(30)


def test_interchange_command(tmp_path, capsys):
    assert run(tmp_path, "interchange", "--N", "3", "--beta", "0") == EXIT_OK
    rec = manifest(tmp_path)["result"]
    assert rec["matrix_display_order"][0] == ["-1", "1/3", "0", "1/3", "0", "1/3"]
    assert sorted(rec["spectrum"]) == pytest.approx([-2, -1, -1, -1, -1, 0], abs=1e-10)
    assert rec["detailed_balance_integer_residual"] == 0
    assert rec["pushforward_max_discrepancy"] < 1e-15


def test_selftest(tmp_path):
    assert run(tmp_path, "selftest") == EXIT_OK
    assert all(manifest(tmp_path)["result"]["checks"].values())


@pytest.mark.skipif(shutil.which("abcring") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["abcring", "gap", "--N", "3", "--out", str(tmp_path / "s")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    res = subprocess.run([sys.executable, "-m", "abcring.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "selftest" in res.stdout
