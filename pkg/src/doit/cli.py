"""Command-line interface.

Subcommands:

* sample     draw from the uncorrected backward chain
* steer      draw from the corrected chain (surrogate or rollout estimator)
* prototype  draw from the exhaustive rollout-at-every-step reference sampler
* oracle     write closed-form targets and h tables (linear-Gaussian only)
* eval       compare two samples.csv files with W1 / TV and reward summaries
* sweep      grid of (tau, gamma) cells, one steered run each

Every run writes its outputs atomically (temp file in the target directory,
then rename), so a crashed run never leaves a half-written CSV or report
behind. Exit codes: 0 success, 2 configuration error, 3 runtime failure.

The effective seed is resolved as: --seed flag, then the DOIT_SEED
environment variable, then run.seed from the config.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import tempfile
import time
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import streams
from .config import ExperimentConfig, build_config, load_config, validate_for_steer
from .errors import ConfigError, SteeringError, UnsupportedOperationError
from .metrics import summary_stats, tv_histogram, wasserstein_1d
from .oracle import (
    backward_affine_law,
    exact_acceptance_rate,
    exact_grad_log_h,
    exact_h,
    rejection_sample_target,
    sample_tilted_target,
)
from .reward import eval_reward
from .sampler import sample_doit, sample_doit_prototypical, sample_vanilla
from .schedule import kappa_sigma


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SteeringError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3
    except Exception:
        traceback.print_exc()
        return 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doit",
        description="Reward-tilted diffusion sampling with Monte Carlo "
        "h-transform corrections.",
    )
    sub = parser.add_subparsers(dest="command")

    def add_run_command(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", default=None, help="override the output directory")
        return p

    add_run_command("sample", "uncorrected backward-chain samples").set_defaults(
        func=_cmd_sample
    )
    add_run_command("steer", "corrected backward-chain samples").set_defaults(
        func=_cmd_steer
    )
    add_run_command(
        "prototype", "exhaustive rollout reference sampler (expensive)"
    ).set_defaults(func=_cmd_prototype)
    add_run_command(
        "oracle", "closed-form target samples and h tables"
    ).set_defaults(func=_cmd_oracle)

    p_eval = sub.add_parser("eval", help="compare two samples.csv files")
    p_eval.add_argument("csv_a")
    p_eval.add_argument("csv_b")
    p_eval.add_argument("--bins", type=int, default=100)
    p_eval.add_argument("--out", default=".", help="directory for metrics.json")
    p_eval.set_defaults(func=_cmd_eval)

    p_sweep = add_run_command("sweep", "grid of (tau, gamma) steered runs")
    p_sweep.add_argument("--tau", default=None, help="comma-separated tau grid")
    p_sweep.add_argument("--gamma", default=None, help="comma-separated gamma grid")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel cell workers")
    p_sweep.set_defaults(func=_cmd_sweep)
    return parser


def _effective_seed(args, cfg: ExperimentConfig) -> int:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be nonnegative, got {args.seed}")
        return args.seed
    env = os.environ.get("DOIT_SEED")
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"DOIT_SEED must be an integer, got {env!r}")
        if seed < 0:
            raise ConfigError(f"DOIT_SEED must be nonnegative, got {seed}")
        return seed
    return cfg.run.seed


def _out_dir(args, cfg: ExperimentConfig) -> str:
    out = args.out if args.out is not None else cfg.run.out
    os.makedirs(out, exist_ok=True)
    return out


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_samples_csv(path: str, data: np.ndarray, rewards: np.ndarray | None) -> None:
    n, d = data.shape
    r = np.full(n, np.nan) if rewards is None else rewards
    header = ",".join([f"dim_{i}" for i in range(d)] + ["reward"])
    lines = [header]
    for i in range(n):
        row = [repr(float(v)) for v in data[i]]
        row.append(repr(float(r[i])))
        lines.append(",".join(row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_json(path: str, obj: dict) -> None:
    _atomic_write(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _read_samples_csv(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    try:
        raw = np.genfromtxt(path, delimiter=",", names=True)
    except OSError:
        raise ConfigError(f"cannot read csv file: {path}")
    if raw.dtype.names is None:
        raise ConfigError(f"{path} has no header row")
    dims = sorted(
        (name for name in raw.dtype.names if name.startswith("dim_")),
        key=lambda s: int(s.split("_")[1]),
    )
    if not dims:
        raise ConfigError(f"{path} has no dim_* columns")
    raw = np.atleast_1d(raw)
    data = np.stack([raw[name] for name in dims], axis=1)
    rewards = raw["reward"] if "reward" in raw.dtype.names else None
    if rewards is not None and np.all(np.isnan(rewards)):
        rewards = None
    return data, rewards


def _maybe_kappa(cfg: ExperimentConfig) -> float | None:
    try:
        return kappa_sigma(cfg.schedule, cfg.kernel)
    except SteeringError:
        return None


def _maybe_rho(cfg: ExperimentConfig) -> float | None:
    if cfg.reward is None or cfg.h is None:
        return None
    try:
        return exact_acceptance_rate(cfg.model, cfg.reward, cfg.h)
    except (UnsupportedOperationError, ConfigError):
        return None


def _run_and_report(args, command: str, sampler) -> int:
    cfg = load_config(args.config)
    seed = _effective_seed(args, cfg)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    batch = sampler(cfg, seed)
    wall = time.perf_counter() - t0
    rewards = None if cfg.reward is None else eval_reward(cfg.reward, batch.data)
    csv_path = os.path.join(out, "samples.csv")
    _write_samples_csv(csv_path, batch.data, rewards)
    report = {
        "command": command,
        "config_digest": cfg.digest,
        "seed": seed,
        "n": int(batch.data.shape[0]),
        "reward_summary": None if rewards is None else summary_stats(rewards).as_dict(),
        "nfe_total": batch.nfe_total,
        "truncation_rate": batch.truncation_rate,
        "wall_time_s": wall,
        "kappa_sigma": _maybe_kappa(cfg),
        "rho": _maybe_rho(cfg),
        "outputs": {"samples": "samples.csv"},
    }
    _write_json(os.path.join(out, "report.json"), report)
    mean_txt = "" if rewards is None else f" mean_reward={np.mean(rewards):.6g}"
    print(f"{command}: n={batch.data.shape[0]} seed={seed}{mean_txt} -> {csv_path}")
    return 0


def _cmd_sample(args) -> int:
    return _run_and_report(
        args,
        "sample",
        lambda cfg, seed: sample_vanilla(
            cfg.model, cfg.schedule, cfg.kernel, cfg.run.n, seed
        ),
    )


def _cmd_steer(args) -> int:
    cfg = load_config(args.config)
    validate_for_steer(cfg)
    return _run_and_report(
        args,
        "steer",
        lambda cfg, seed: sample_doit(
            cfg.model, cfg.schedule, cfg.kernel, cfg.reward, cfg.h, cfg.doob,
            cfg.run.n, seed,
        ),
    )


def _cmd_prototype(args) -> int:
    cfg = load_config(args.config)
    validate_for_steer(cfg)
    return _run_and_report(
        args,
        "prototype",
        lambda cfg, seed: sample_doit_prototypical(
            cfg.model, cfg.schedule, cfg.kernel, cfg.reward, cfg.h, cfg.doob,
            cfg.run.n, seed,
        ),
    )


def _cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    if cfg.reward is None or cfg.h is None:
        raise ConfigError("the oracle command needs [reward] and [h] tables")
    seed = _effective_seed(args, cfg)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()

    rho_exact = _maybe_rho(cfg)
    rho_empirical = None
    if cfg.h.kind == "exp_tilt":
        target = sample_tilted_target(cfg.model, cfg.reward, cfg.h, cfg.run.n, seed)
    elif cfg.h.kind == "indicator":
        target, rho_empirical = rejection_sample_target(
            cfg.model, cfg.h, cfg.reward, cfg.run.n, seed
        )
    else:
        raise ConfigError(f"oracle supports exp_tilt and indicator, not {cfg.h.kind!r}")
    rewards = eval_reward(cfg.reward, target)
    _write_samples_csv(os.path.join(out, "target_samples.csv"), target, rewards)

    h_table = None
    if cfg.model.dim == 1:
        h_table = "h_table.csv"
        lines = ["l,t,x,h,grad_log_h"]
        for l in range(1, cfg.schedule.L + 1):
            law = backward_affine_law(cfg.model, cfg.schedule, cfg.kernel, l)
            t_l = cfg.schedule.t[l]
            abar = cfg.schedule.alpha_bar[l]
            center = float(np.sqrt(abar) * cfg.model.means[0][0])
            spread = float(
                np.sqrt(abar * cfg.model.variances[0] + 1.0 - abar)
            )
            grid = np.linspace(center - 4 * spread, center + 4 * spread, 41)
            try:
                h = exact_h(law, cfg.h, cfg.reward, grid[:, None])
                g = exact_grad_log_h(law, cfg.h, cfg.reward, grid[:, None])[:, 0]
            except UnsupportedOperationError:
                # indicator h has no gradient where the conditional law is
                # deterministic (typically l = 1); omit those levels
                continue
            for x, hv, gv in zip(grid, h, g):
                lines.append(
                    f"{l},{repr(float(t_l))},{repr(float(x))},"
                    f"{repr(float(hv))},{repr(float(gv))}"
                )
        _atomic_write(os.path.join(out, h_table), "\n".join(lines) + "\n")

    report = {
        "command": "oracle",
        "config_digest": cfg.digest,
        "seed": seed,
        "n": int(target.shape[0]),
        "reward_summary": summary_stats(rewards).as_dict(),
        "rho_exact": rho_exact,
        "rho_empirical": rho_empirical,
        "wall_time_s": time.perf_counter() - t0,
        "outputs": {"target_samples": "target_samples.csv", "h_table": h_table},
    }
    _write_json(os.path.join(out, "oracle_report.json"), report)
    print(f"oracle: n={target.shape[0]} rho_exact={rho_exact} -> {out}")
    return 0


def _cmd_eval(args) -> int:
    data_a, rewards_a = _read_samples_csv(args.csv_a)
    data_b, rewards_b = _read_samples_csv(args.csv_b)
    if data_a.shape[1] != data_b.shape[1]:
        raise ConfigError(
            f"dimension mismatch: {data_a.shape[1]} vs {data_b.shape[1]}"
        )
    d = data_a.shape[1]
    w1 = [
        wasserstein_1d(data_a[:, i], data_b[:, i]) for i in range(d)
    ]
    tv = tv_histogram(data_a, data_b, bins=args.bins) if d <= 2 else None
    metrics = {
        "n_a": int(data_a.shape[0]),
        "n_b": int(data_b.shape[0]),
        "dim": d,
        "w1_per_dim": w1,
        "tv": tv,
        "reward_w1": None,
        "reward_summary_a": None,
        "reward_summary_b": None,
    }
    if rewards_a is not None and rewards_b is not None:
        metrics["reward_w1"] = wasserstein_1d(rewards_a, rewards_b)
        metrics["reward_summary_a"] = summary_stats(rewards_a).as_dict()
        metrics["reward_summary_b"] = summary_stats(rewards_b).as_dict()
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "metrics.json"), metrics)
    tv_txt = "n/a" if tv is None else f"{tv:.6g}"
    print(f"eval: w1={['%.6g' % v for v in w1]} tv={tv_txt} -> {args.out}/metrics.json")
    return 0


def _parse_grid(text: str | None, fallback, what: str):
    if text is None:
        return fallback
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError:
        raise ConfigError(f"--{what} must be a comma-separated list of numbers")
    if not values:
        raise ConfigError(f"--{what} must contain at least one value")
    return values


def _sweep_cell(payload: tuple) -> dict:
    """Run one sweep cell; returns a flat row for the sweep table.

    Module-level so ProcessPoolExecutor can pickle it.
    """
    raw, tau, gamma, seed = payload
    row = {
        "tau": tau, "gamma": gamma, "seed": seed, "status": "ok", "error": "",
        "n": "", "min": "", "q1": "", "mean": "", "q3": "", "max": "",
        "std": "", "nfe_total": "", "truncation_rate": "",
    }
    try:
        cell_raw = copy.deepcopy(raw)
        cell_raw.setdefault("h", {})["tau"] = tau
        cell_raw.setdefault("doob", {})["gamma"] = gamma
        cell_raw.pop("sweep", None)
        cfg = build_config(cell_raw)
        validate_for_steer(cfg)
        batch = sample_doit(
            cfg.model, cfg.schedule, cfg.kernel, cfg.reward, cfg.h, cfg.doob,
            cfg.run.n, seed,
        )
        rewards = eval_reward(cfg.reward, batch.data)
        s = summary_stats(rewards)
        row.update(
            n=s.n, min=s.min, q1=s.q1, mean=s.mean, q3=s.q3, max=s.max, std=s.std,
            nfe_total=batch.nfe_total, truncation_rate=batch.truncation_rate,
        )
    except SteeringError as e:
        row["status"] = "error"
        row["error"] = str(e).replace("\n", " ").replace(",", ";")
    return row


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg.h is None:
        raise ConfigError("sweep needs an [h] table to vary tau over")
    taus = _parse_grid(args.tau, None if cfg.sweep is None else cfg.sweep.taus, "tau")
    gammas = _parse_grid(
        args.gamma, None if cfg.sweep is None else cfg.sweep.gammas, "gamma"
    )
    if taus is None or gammas is None:
        raise ConfigError(
            "sweep needs a [sweep] table with tau and gamma lists, "
            "or --tau/--gamma flags"
        )
    seed = _effective_seed(args, cfg)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()

    payloads = []
    for i_tau, tau in enumerate(taus):
        for i_gamma, gamma in enumerate(gammas):
            cell_seed = streams.derive_seed(seed, streams.SWEEP_CELL, i_tau, i_gamma)
            payloads.append((cfg.raw, tau, gamma, cell_seed))

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(_sweep_cell, payloads))
    else:
        rows = [_sweep_cell(p) for p in payloads]

    columns = [
        "tau", "gamma", "seed", "status", "error", "n", "min", "q1", "mean",
        "q3", "max", "std", "nfe_total", "truncation_rate",
    ]
    lines = [",".join(columns)]
    for row in rows:
        lines.append(
            ",".join(
                repr(v) if isinstance(v, float) else str(v) for v in
                (row[c] for c in columns)
            )
        )
    _atomic_write(os.path.join(out, "sweep.csv"), "\n".join(lines) + "\n")
    failed = sum(1 for r in rows if r["status"] != "ok")
    report = {
        "command": "sweep",
        "config_digest": cfg.digest,
        "seed": seed,
        "cells": len(rows),
        "failed_cells": failed,
        "tau_grid": list(taus),
        "gamma_grid": list(gammas),
        "wall_time_s": time.perf_counter() - t0,
        "outputs": {"table": "sweep.csv"},
    }
    _write_json(os.path.join(out, "sweep_report.json"), report)
    print(f"sweep: {len(rows)} cells ({failed} failed) -> {out}/sweep.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
