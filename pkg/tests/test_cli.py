import csv
import json

import numpy as np
import pytest

from main import cli_main


def run(capsys, *argv):
    code = cli_main(["-q", *argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def bench_args(out_dir, *extra):
    return ["--seed", "1", "--out", str(out_dir), *extra, "bench", "--model", "uniform", "--T", "6", "--N", "3",
            "--strategy", "IMC,IIC", "--replicates", "3"]


def test_oracle_lg_zero_observations(capsys, tmp_path):
    code, out, err = run(capsys, "--seed", "1", "--out", str(tmp_path), "oracle", "--model", "lg",
                         "--params", "0.9,1,1", "--T", "8")
    assert code == 0
    assert err == ""
    payload = json.loads(out)
    assert payload["means"] == [0.0] * 8
    assert len(payload["variances"]) == 8


def test_oracle_discrete(capsys):
    code, out, _ = run(capsys, "oracle", "--model", "discrete", "--T", "5")
    assert code == 0
    marginals = np.array(json.loads(out)["marginals"])
    assert np.allclose(marginals.sum(axis=1), 1.0)


def test_oracle_size_limit_is_a_runtime_error(capsys):
    code, _, err = run(capsys, "oracle", "--model", "discrete", "--T", "13")
    assert code == 2
    assert "T <= 12" in err


@pytest.mark.parametrize("argv", [
    [],
    ["oracle", "--model", "sv"],
    ["--threads", "0", "oracle"],
    ["bench", "--N", "three"],
    ["smooth", "--iterations", "10", "--burn-in", "10"],
    ["frobnicate"],
])
def test_usage_errors_exit_with_one(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert err.startswith("error:")


def test_bad_config_names_the_line(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("seed=1\nsweep.M=3\n", encoding="utf-8")
    code, _, err = run(capsys, "--config", str(cfg), "bench")
    assert code == 1
    assert f"{cfg}:2:" in err


def test_help_config_lists_keys(capsys):
    code, out, _ = run(capsys, "--help-config")
    assert code == 0
    assert "- model.family:" in out
    assert "- sweep.strategies:" in out


def test_help_exits_cleanly(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0
    assert "bench" in out


def test_bench_outputs_are_byte_identical(capsys, tmp_path):
    assert run(capsys, *bench_args(tmp_path / "a"))[0] == 0
    assert run(capsys, *bench_args(tmp_path / "b"))[0] == 0
    for name in ("meeting.csv", "cost.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    with open(tmp_path / "a" / "meeting.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6
    assert [r["strategy"] for r in rows] == ["IMC"] * 3 + ["IIC"] * 3
    assert all(r["wall_nanos"] == "0" and r["seed"] == "1" for r in rows)


def test_bench_outputs_do_not_depend_on_threads(capsys, tmp_path):
    assert run(capsys, *bench_args(tmp_path / "one", "--threads", "1"))[0] == 0
    assert run(capsys, *bench_args(tmp_path / "two", "--threads", "2"))[0] == 0
    for name in ("meeting.csv", "cost.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_bench_budget_exhausted_exits_with_three(capsys, tmp_path):
    code, _, err = run(capsys, *bench_args(tmp_path, "--time-budget", "1e-9"))
    assert code == 3
    assert "partial results written" in err
    assert (tmp_path / "cost.csv").exists()


def test_smooth(capsys, tmp_path):
    code, out, _ = run(capsys, "--seed", "2", "--out", str(tmp_path), "smooth", "--model", "discrete", "--T", "4",
                       "--N", "3", "--iterations", "50", "--burn-in", "10")
    assert code == 0
    payload = json.loads(out)
    assert payload["kernel"] == "cbpf"
    assert len(payload["means"]) == 4
    assert all(0.0 <= r <= 1.0 for r in payload["reference_change_rate"])
    with open(tmp_path / "smooth_paths.csv", newline="") as f:
        assert len(list(csv.reader(f))) == 41
    assert (tmp_path / "smooth_marginals.csv").exists()


def test_couple(capsys, tmp_path):
    code, out, _ = run(capsys, "--out", str(tmp_path), "couple", "--model", "uniform", "--T", "10", "--N", "4",
                       "--iterations", "30")
    assert code == 0
    payload = json.loads(out)
    assert payload["b_star"] == 10
    assert len(payload["holes"]) == 30
    assert payload["meeting"]["iterations_run"] == 30
    assert (tmp_path / "coupling_matrix.pgm").read_bytes().startswith(b"P5\n10 30\n255\n")
    assert json.loads((tmp_path / "couple.json").read_text()) == payload


def test_unbiased_with_fixed_lag(capsys, tmp_path):
    code, out, _ = run(capsys, "--out", str(tmp_path), "unbiased", "--model", "discrete", "--T", "4", "--N", "3",
                       "--strategy", "IIC", "--k", "1", "--L", "1", "--ell", "3")
    assert code == 0
    payload = json.loads(out)
    assert (payload["k"], payload["ell"], payload["L"]) == (1, 3, 1)
    assert isinstance(payload["value"], float)
    assert payload["meeting"]["tau"] >= 1


def test_unbiased_with_tuned_lag(capsys, tmp_path):
    code, out, _ = run(capsys, "--out", str(tmp_path), "unbiased", "--model", "discrete", "--T", "4", "--N", "3",
                       "--strategy", "IIC", "--pilot-runs", "10", "--h", "mean-state")
    assert code == 0
    payload = json.loads(out)
    assert payload["ell"] == 5 * payload["k"]


def test_unbiased_rejects_too_few_pilot_runs(capsys, tmp_path):
    code, _, _ = run(capsys, "--out", str(tmp_path), "unbiased", "--model", "discrete", "--T", "4",
                     "--pilot-runs", "5")
    assert code == 2


def test_mle_trace(capsys, tmp_path):
    code, out, _ = run(capsys, "--out", str(tmp_path), "mle", "--model", "lg", "--T", "20", "--N", "8",
                       "--iterations", "3")
    assert code == 0
    payload = json.loads(out)
    assert set(payload["estimate"]) == {"rho", "sigma_x", "sigma_y"}
    assert set(payload["kalman_mle"]) == {"rho", "sigma_x", "sigma_y"}
    with open(tmp_path / "trace.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["iteration"] for r in rows] == ["0", "1", "2", "3"]
