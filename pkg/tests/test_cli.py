"""End-to-end CLI runs against temp directories.

These call doit.cli.main directly with argv lists, so exit codes and file
outputs are exercised exactly as a shell user would see them.
"""

import csv
import json
import os

import numpy as np
import pytest
from scipy.stats import norm

from doit import streams
from doit.cli import main
from doit.config import load_config
from doit.reward import eval_reward
from doit.sampler import sample_vanilla

BASE = {
    "schedule": {"T": 1.0, "L": 8},
    "model": {"family": "gaussian", "mean": 0.0, "var": 1.0},
    "kernel": {"kind": "ddim", "ddim_eta": 1.0},
    "reward": {"kind": "linear", "a": [1.0]},
    "h": {"kind": "exp_tilt", "tau": 1.0, "rmax": 8.0},
    "doob": {"M": 8, "gamma": 1.0},
    "run": {"n": 40, "seed": 3},
}


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def _write_config(tmp_path, name="exp.toml", drop=(), **overrides):
    tables = {k: dict(v) for k, v in BASE.items() if k not in drop}
    for table, entries in overrides.items():
        tables.setdefault(table, {}).update(entries)
    lines = []
    for table, entries in tables.items():
        lines.append(f"[{table}]")
        for key, value in entries.items():
            lines.append(f"{key} = {_toml_value(value)}")
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def _no_temp_leftovers(directory):
    return not [f for f in os.listdir(directory) if f.startswith(".tmp-")]


def test_sample_writes_csv_and_report(tmp_path):
    cfg_path = _write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["sample", "--config", cfg_path, "--out", str(out)]) == 0

    lines = (out / "samples.csv").read_text().splitlines()
    assert lines[0] == "dim_0,reward"
    assert len(lines) == 1 + 40

    report = json.loads((out / "report.json").read_text())
    assert report["command"] == "sample"
    assert report["seed"] == 3
    assert report["n"] == 40
    assert report["nfe_total"] == 40 * 8
    assert report["truncation_rate"] == 0.0
    assert len(report["config_digest"]) == 64
    assert report["kappa_sigma"] is None
    assert report["rho"] == pytest.approx(np.exp(-7.5), rel=1e-9)
    assert report["reward_summary"]["n"] == 40
    assert report["outputs"] == {"samples": "samples.csv"}
    assert _no_temp_leftovers(out)


def test_sample_without_reward_has_nan_column(tmp_path):
    cfg_path = _write_config(tmp_path, drop=("reward", "h"))
    out = tmp_path / "run"
    assert main(["sample", "--config", cfg_path, "--out", str(out)]) == 0
    rows = (out / "samples.csv").read_text().splitlines()[1:]
    assert all(row.endswith(",nan") for row in rows)
    report = json.loads((out / "report.json").read_text())
    assert report["reward_summary"] is None
    assert report["rho"] is None


def test_steer_gamma_zero_matches_sample_bytes(tmp_path):
    cfg_path = _write_config(tmp_path, doob={"gamma": 0.0})
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["sample", "--config", cfg_path, "--out", str(out_a)]) == 0
    assert main(["steer", "--config", cfg_path, "--out", str(out_b)]) == 0
    assert (out_a / "samples.csv").read_bytes() == (out_b / "samples.csv").read_bytes()


def test_steer_shifts_reward_mean(tmp_path):
    cfg_path = _write_config(tmp_path, run={"n": 300})
    out_a = tmp_path / "plain"
    out_b = tmp_path / "steered"
    assert main(["sample", "--config", cfg_path, "--out", str(out_a)]) == 0
    assert main(["steer", "--config", cfg_path, "--out", str(out_b)]) == 0
    mean_a = json.loads((out_a / "report.json").read_text())["reward_summary"]["mean"]
    mean_b = json.loads((out_b / "report.json").read_text())["reward_summary"]["mean"]
    assert mean_b - mean_a > 0.3


def test_prototype_nfe(tmp_path):
    cfg_path = _write_config(
        tmp_path, schedule={"T": 1.0, "L": 3}, doob={"M": 2}, run={"n": 2, "seed": 0}
    )
    out = tmp_path / "run"
    assert main(["prototype", "--config", cfg_path, "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    # per chain: L = 3 base evaluations plus M * (l - 1) for l = 2, 3
    assert report["nfe_total"] == 2 * (3 + 2 * 1 + 2 * 2)


def test_missing_config_file_is_config_error(tmp_path):
    assert main(["sample", "--config", str(tmp_path / "nope.toml")]) == 2


def test_bad_toml_is_config_error(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[model\nfamily=")
    assert main(["sample", "--config", str(path)]) == 2


def test_steer_deterministic_kernel_fails_before_sampling(tmp_path):
    cfg_path = _write_config(tmp_path, kernel={"ddim_eta": 0.0})
    out = tmp_path / "run"
    assert main(["steer", "--config", cfg_path, "--out", str(out)]) == 2
    assert not (out / "samples.csv").exists()


def test_no_subcommand_prints_help():
    assert main([]) == 2


def test_seed_priority(tmp_path, monkeypatch):
    cfg_path = _write_config(tmp_path)

    def run(out, argv_extra):
        assert main(["sample", "--config", cfg_path, "--out", str(out)] + argv_extra) == 0
        return json.loads((out / "report.json").read_text())["seed"]

    monkeypatch.delenv("DOIT_SEED", raising=False)
    assert run(tmp_path / "cfg_seed", []) == 3
    monkeypatch.setenv("DOIT_SEED", "5")
    assert run(tmp_path / "env_seed", []) == 5
    assert run(tmp_path / "flag_seed", ["--seed", "9"]) == 9

    a = (tmp_path / "cfg_seed" / "samples.csv").read_bytes()
    b = (tmp_path / "env_seed" / "samples.csv").read_bytes()
    assert a != b


def test_bad_env_seed_is_config_error(tmp_path, monkeypatch):
    cfg_path = _write_config(tmp_path)
    monkeypatch.setenv("DOIT_SEED", "abc")
    assert main(["sample", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 2
    monkeypatch.setenv("DOIT_SEED", "-4")
    assert main(["sample", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 2


def test_negative_seed_flag_is_config_error(tmp_path):
    cfg_path = _write_config(tmp_path)
    code = main(
        ["sample", "--config", cfg_path, "--out", str(tmp_path / "o"), "--seed", "-1"]
    )
    assert code == 2


def test_eval_identical_files(tmp_path):
    cfg_path = _write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["sample", "--config", cfg_path, "--out", str(out)]) == 0
    csv_path = str(out / "samples.csv")
    metrics_dir = tmp_path / "metrics"
    assert main(["eval", csv_path, csv_path, "--out", str(metrics_dir)]) == 0
    metrics = json.loads((metrics_dir / "metrics.json").read_text())
    assert metrics["w1_per_dim"] == [0.0]
    assert metrics["tv"] == 0.0
    assert metrics["reward_w1"] == 0.0
    assert metrics["n_a"] == metrics["n_b"] == 40


def test_eval_detects_shift(tmp_path):
    cfg_path = _write_config(tmp_path, run={"n": 400})
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["sample", "--config", cfg_path, "--out", str(out_a)]) == 0
    assert main(["steer", "--config", cfg_path, "--out", str(out_b)]) == 0
    metrics_dir = tmp_path / "m"
    code = main(
        [
            "eval",
            str(out_a / "samples.csv"),
            str(out_b / "samples.csv"),
            "--out",
            str(metrics_dir),
        ]
    )
    assert code == 0
    metrics = json.loads((metrics_dir / "metrics.json").read_text())
    assert metrics["w1_per_dim"][0] > 0.2
    assert metrics["reward_w1"] > 0.2
    assert 0.0 < metrics["tv"] <= 1.0


def test_eval_missing_file(tmp_path):
    assert main(["eval", str(tmp_path / "x.csv"), str(tmp_path / "y.csv")]) == 2


def test_oracle_exp_tilt_outputs(tmp_path):
    cfg_path = _write_config(tmp_path, run={"n": 500, "seed": 11})
    out = tmp_path / "oracle"
    assert main(["oracle", "--config", cfg_path, "--out", str(out)]) == 0

    target = np.loadtxt(out / "target_samples.csv", delimiter=",", skiprows=1)
    assert target.shape == (500, 2)
    # tilted target for N(0,1), a = 1, tau = 1 is N(1, 1)
    assert abs(np.mean(target[:, 0]) - 1.0) < 0.15

    table = list(csv.DictReader(open(out / "h_table.csv")))
    assert len(table) == 8 * 41
    assert set(table[0]) == {"l", "t", "x", "h", "grad_log_h"}
    h_vals = np.array([float(r["h"]) for r in table])
    assert np.all(np.isfinite(h_vals)) and np.all(h_vals > 0)

    report = json.loads((out / "oracle_report.json").read_text())
    assert report["rho_exact"] == pytest.approx(np.exp(-7.5), rel=1e-9)
    assert report["rho_empirical"] is None
    assert report["outputs"]["h_table"] == "h_table.csv"
    assert _no_temp_leftovers(out)


def test_oracle_indicator_reports_empirical_rate(tmp_path):
    cfg_path = _write_config(
        tmp_path,
        h={"kind": "indicator", "r0": 1.0, "rmax": 8.0},
        run={"n": 300, "seed": 2},
    )
    out = tmp_path / "oracle"
    assert main(["oracle", "--config", cfg_path, "--out", str(out)]) == 0
    report = json.loads((out / "oracle_report.json").read_text())
    assert report["rho_exact"] == pytest.approx(norm.cdf(-1.0), rel=1e-9)
    assert report["rho_empirical"] == pytest.approx(norm.cdf(-1.0), rel=0.25)
    assert report["reward_summary"]["min"] >= 1.0

    # the l = 1 conditional law is deterministic, so its indicator gradient
    # is undefined and that level is left out of the table
    table = list(csv.DictReader(open(out / "h_table.csv")))
    assert sorted({int(r["l"]) for r in table}) == list(range(2, 9))


def test_oracle_low_acceptance_is_runtime_error(tmp_path):
    cfg_path = _write_config(tmp_path, h={"kind": "indicator", "r0": 12.0, "rmax": 16.0})
    assert main(["oracle", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 3


def test_oracle_needs_reward_and_h(tmp_path):
    cfg_path = _write_config(tmp_path, drop=("reward", "h"))
    assert main(["oracle", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 2


def _read_sweep_rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_sweep_grid_order_and_vanilla_column(tmp_path):
    cfg_path = _write_config(tmp_path, doob={"M": 4})
    out = tmp_path / "sweep"
    code = main(
        [
            "sweep",
            "--config",
            cfg_path,
            "--out",
            str(out),
            "--tau",
            "0.5,1.0",
            "--gamma",
            "0.0,1.0",
        ]
    )
    assert code == 0
    rows = _read_sweep_rows(out / "sweep.csv")
    assert [(r["tau"], r["gamma"]) for r in rows] == [
        ("0.5", "0.0"),
        ("0.5", "1.0"),
        ("1.0", "0.0"),
        ("1.0", "1.0"),
    ]
    assert all(r["status"] == "ok" for r in rows)

    # a gamma = 0 cell is the uncorrected chain run at that cell's seed
    cfg = load_config(cfg_path)
    cell_seed = streams.derive_seed(3, streams.SWEEP_CELL, 0, 0)
    assert rows[0]["seed"] == str(cell_seed)
    batch = sample_vanilla(cfg.model, cfg.schedule, cfg.kernel, cfg.run.n, cell_seed)
    rewards = eval_reward(cfg.reward, batch.data)
    assert float(rows[0]["mean"]) == pytest.approx(np.mean(rewards), rel=1e-12)

    report = json.loads((out / "sweep_report.json").read_text())
    assert report["cells"] == 4
    assert report["failed_cells"] == 0
    assert report["tau_grid"] == [0.5, 1.0]


def test_sweep_records_cell_failures(tmp_path):
    cfg_path = _write_config(tmp_path, doob={"M": 4})
    out = tmp_path / "sweep"
    code = main(
        [
            "sweep",
            "--config",
            cfg_path,
            "--out",
            str(out),
            "--tau",
            "0.0,1.0",
            "--gamma",
            "1.0",
        ]
    )
    assert code == 0
    rows = _read_sweep_rows(out / "sweep.csv")
    assert [r["status"] for r in rows] == ["error", "ok"]
    assert rows[0]["error"] != ""
    assert "," not in rows[0]["error"]
    report = json.loads((out / "sweep_report.json").read_text())
    assert report["failed_cells"] == 1


def test_sweep_from_config_table_and_parallel_determinism(tmp_path):
    cfg_path = _write_config(
        tmp_path,
        doob={"M": 4},
        run={"n": 20, "seed": 3},
        sweep={"tau": [0.5, 1.0], "gamma": [0.5, 1.0]},
    )
    out_serial = tmp_path / "serial"
    out_par = tmp_path / "par"
    assert main(["sweep", "--config", cfg_path, "--out", str(out_serial)]) == 0
    code = main(["sweep", "--config", cfg_path, "--out", str(out_par), "--jobs", "2"])
    assert code == 0
    serial = (out_serial / "sweep.csv").read_bytes()
    parallel = (out_par / "sweep.csv").read_bytes()
    assert serial == parallel


def test_sweep_without_grids_is_config_error(tmp_path):
    cfg_path = _write_config(tmp_path)
    assert main(["sweep", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 2
