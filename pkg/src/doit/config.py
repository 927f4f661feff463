"""Experiment configuration: TOML loading, validation, canonical digests.

A config file has up to eight tables. Example:

    [schedule]
    T = 1.0
    L = 100

    [model]
    family = "gaussian"
    mean = 0.0
    var = 1.0

    [kernel]
    kind = "ddim"
    ddim_eta = 1.0

    [reward]
    kind = "linear"
    a = [1.0]

    [h]
    kind = "exp_tilt"
    tau = 1.0
    rmax = 8.0

    [doob]
    M = 1024
    gamma = 1.0

    [run]
    n = 20000
    seed = 7
    out = "runs/steer"

Unknown tables or keys are rejected, not ignored; a typo should fail the
run rather than silently falling back to a default.

The canonical form resolves every default, so two files that spell the same
experiment differently (key order, explicit defaults) share one digest. The
digest excludes run.seed and run.out: it identifies the experiment, while
the seed actually used is reported next to it.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .doob import DoobConfig
from .errors import ConfigError
from .kernels import KernelKind, step_stds
from .reward import (
    HSpec,
    RewardSpec,
    linear_reward,
    named_reward,
    quadratic_reward,
    threshold_reward,
)
from .schedule import NoiseSchedule, make_schedule
from .score import ScoreModel, gaussian_model, gmm_model, registered_score


@dataclass(frozen=True)
class RunSpec:
    n: int = 1000
    seed: int = 0
    out: str = "out"


@dataclass(frozen=True)
class SweepSpec:
    taus: tuple[float, ...]
    gammas: tuple[float, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    schedule: NoiseSchedule
    model: ScoreModel
    kernel: KernelKind
    reward: RewardSpec | None
    h: HSpec | None
    doob: DoobConfig
    run: RunSpec
    sweep: SweepSpec | None
    raw: dict
    canonical: dict
    digest: str


class _Section:
    """One config table with consumed-key tracking."""

    def __init__(self, name: str, data: dict):
        if not isinstance(data, dict):
            raise ConfigError(f"[{name}] must be a table, got {type(data).__name__}")
        self.name = name
        self.data = data
        self.seen: set[str] = set()

    def take(self, key: str, kind, default=None, required: bool = False):
        self.seen.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"missing required key {self.name}.{key}")
            return default
        value = self.data[key]
        if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{self.name}.{key} must be an integer, got {value!r}")
            return value
        if kind is str and isinstance(value, str):
            return value
        if kind is list and isinstance(value, list):
            return value
        raise ConfigError(
            f"{self.name}.{key} must be of type {kind.__name__}, got {value!r}"
        )

    def finish(self):
        extra = set(self.data) - self.seen
        if extra:
            raise ConfigError(
                f"unknown key(s) in [{self.name}]: {', '.join(sorted(extra))}"
            )


def _vector(section: _Section, key: str, required: bool = False) -> np.ndarray | None:
    value = section.data.get(key)
    section.seen.add(key)
    if value is None:
        if required:
            raise ConfigError(f"missing required key {section.name}.{key}")
        return None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.array([float(value)])
    if isinstance(value, list) and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        return np.asarray(value, dtype=float)
    raise ConfigError(f"{section.name}.{key} must be a number or list of numbers")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config file {path} is not valid TOML: {e}")
    return build_config(raw)


def build_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed config dict and construct every runtime object."""
    known = {"schedule", "model", "kernel", "reward", "h", "doob", "run", "sweep"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config table(s): {', '.join(sorted(extra))}")

    sched_s = _Section("schedule", raw.get("schedule", {}))
    schedule = make_schedule(
        T=sched_s.take("T", float, default=2.0),
        L=sched_s.take("L", int, default=20),
        grid=sched_s.take("grid", str, default="uniform"),
        log_snr_t_min=sched_s.take("log_snr_t_min", float),
    )
    sched_s.finish()

    model = _build_model(_Section("model", raw.get("model", {})))

    kern_s = _Section("kernel", raw.get("kernel", {}))
    kernel = KernelKind(
        name=kern_s.take("kind", str, default="ddim"),
        eta=kern_s.take("ddim_eta", float, default=1.0),
    )
    kern_s.finish()

    reward = None
    if "reward" in raw:
        reward = _build_reward(_Section("reward", raw["reward"]))

    h = None
    if "h" in raw:
        h_s = _Section("h", raw["h"])
        kind = h_s.take("kind", str, required=True)
        h = HSpec(
            kind=kind,
            tau=h_s.take("tau", float, default=1.0),
            r0=h_s.take("r0", float, default=0.0),
        )
        rmax = h_s.take("rmax", float)
        h_s.finish()
        if rmax is not None:
            if reward is None:
                raise ConfigError("h.rmax was given but there is no [reward] table")
            reward = replace(reward, r_max=float(rmax))
        if kind == "ratio_event":
            raise ConfigError(
                "ratio_event needs a Python callable and cannot be configured "
                "from a file; build the HSpec in code instead"
            )

    doob_s = _Section("doob", raw.get("doob", {}))
    eta_raw = doob_s.data.get("eta", "auto")
    doob_s.seen.add("eta")
    if not (isinstance(eta_raw, str) or isinstance(eta_raw, (int, float))):
        raise ConfigError(f"doob.eta must be 'auto', 'none', or a number, got {eta_raw!r}")
    doob = DoobConfig(
        m=doob_s.take("M", int, default=32),
        gamma=doob_s.take("gamma", float, default=1.0),
        l_star=doob_s.take("l_star", int),
        eta_rule=eta_raw if isinstance(eta_raw, str) else float(eta_raw),
        estimator=doob_s.take("estimator", str, default="surrogate"),
        jacobian=doob_s.take("jacobian", str, default="exact"),
    )
    doob_s.finish()
    if doob.l_star is not None and doob.l_star > schedule.L:
        raise ConfigError(f"doob.l_star = {doob.l_star} exceeds schedule.L = {schedule.L}")

    run_s = _Section("run", raw.get("run", {}))
    run = RunSpec(
        n=run_s.take("n", int, default=1000),
        seed=run_s.take("seed", int, default=0),
        out=run_s.take("out", str, default="out"),
    )
    run_s.finish()
    if run.n < 1:
        raise ConfigError(f"run.n must be positive, got {run.n}")
    if run.seed < 0:
        raise ConfigError(f"run.seed must be nonnegative, got {run.seed}")

    sweep = None
    if "sweep" in raw:
        sweep_s = _Section("sweep", raw["sweep"])
        taus = sweep_s.take("tau", list, required=True)
        gammas = sweep_s.take("gamma", list, required=True)
        sweep_s.finish()
        sweep = SweepSpec(
            taus=tuple(float(v) for v in taus),
            gammas=tuple(float(v) for v in gammas),
        )
        if h is not None and any(t <= 0 for t in sweep.taus) and h.kind == "exp_tilt":
            raise ConfigError("sweep.tau values must be positive for exp_tilt")
        if any(g < 0 for g in sweep.gammas):
            raise ConfigError("sweep.gamma values must be nonnegative")

    canonical = _canonical_dict(schedule, model, kernel, reward, h, doob, sweep)
    digest = hashlib.sha256(
        json.dumps(canonical, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    return ExperimentConfig(
        schedule=schedule,
        model=model,
        kernel=kernel,
        reward=reward,
        h=h,
        doob=doob,
        run=run,
        sweep=sweep,
        raw=raw,
        canonical=canonical,
        digest=digest,
    )


def _build_model(s: _Section) -> ScoreModel:
    family = s.take("family", str, required=True)
    if family == "gaussian":
        mean = _vector(s, "mean", required=True)
        var = s.take("var", float, required=True)
        s.finish()
        return gaussian_model(mean, var)
    if family == "gmm":
        means_raw = s.take("means", list, required=True)
        if all(isinstance(v, list) for v in means_raw):
            means = np.asarray(means_raw, dtype=float)
        elif all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in means_raw
        ):
            means = np.asarray(means_raw, dtype=float)[:, None]
        else:
            raise ConfigError("model.means must be a list of numbers or of vectors")
        variances = _vector(s, "variances", required=True)
        weights = _vector(s, "weights")
        s.finish()
        if weights is None:
            weights = np.full(means.shape[0], 1.0 / means.shape[0])
        return gmm_model(means, variances, weights)
    if family == "external":
        name = s.take("name", str, required=True)
        s.finish()
        return registered_score(name)
    raise ConfigError(f"unknown model family {family!r}")


def _build_reward(s: _Section) -> RewardSpec:
    kind = s.take("kind", str, required=True)
    if kind == "linear":
        a = _vector(s, "a", required=True)
        s.finish()
        return linear_reward(a)
    if kind == "quadratic":
        center = _vector(s, "center", required=True)
        scale = s.take("scale", float, default=1.0)
        s.finish()
        return quadratic_reward(center, scale)
    if kind == "threshold_step":
        a = _vector(s, "a", required=True)
        r0 = s.take("r0", float, default=0.0)
        s.finish()
        return threshold_reward(a, r0)
    if kind == "named_external":
        name = s.take("name", str, required=True)
        s.finish()
        return named_reward(name)
    raise ConfigError(f"unknown reward kind {kind!r}")


def _canonical_dict(schedule, model, kernel, reward, h, doob, sweep) -> dict:
    out: dict[str, Any] = {
        "schedule": {
            "T": schedule.T,
            "L": schedule.L,
            "grid": schedule.grid,
            "t": [float(v) for v in schedule.t],
        },
        "model": {
            "family": model.family,
            "dim": model.dim,
            "name": model.name,
            "means": None if model.means is None else model.means.tolist(),
            "variances": None if model.variances is None else model.variances.tolist(),
            "weights": None if model.weights is None else model.weights.tolist(),
        },
        "kernel": {"kind": kernel.name, "ddim_eta": kernel.eta},
        "doob": {
            "M": doob.m,
            "gamma": doob.gamma,
            "l_star": doob.l_star,
            "eta": doob.eta_rule,
            "estimator": doob.estimator,
            "jacobian": doob.jacobian,
        },
    }
    if reward is not None:
        out["reward"] = {
            "kind": reward.kind,
            "a": None if reward.a is None else reward.a.tolist(),
            "center": None if reward.center is None else reward.center.tolist(),
            "scale": reward.scale,
            "r0": reward.r0,
            "name": reward.name,
            "r_max": reward.r_max if np.isfinite(reward.r_max) else "inf",
        }
    if h is not None:
        out["h"] = {"kind": h.kind, "tau": h.tau, "r0": h.r0}
    if sweep is not None:
        out["sweep"] = {"tau": list(sweep.taus), "gamma": list(sweep.gammas)}
    return out


def validate_for_steer(cfg: ExperimentConfig) -> None:
    """Checks that must fail with a config error before any sampling starts."""
    if cfg.reward is None:
        raise ConfigError("steering needs a [reward] table")
    if cfg.h is None:
        raise ConfigError("steering needs an [h] table")
    if cfg.model.family == "external" and cfg.doob.jacobian == "exact":
        raise ConfigError(
            "external score models cannot provide exact Jacobians; "
            "set doob.jacobian = 'frozen'"
        )
    l_star = cfg.schedule.L if cfg.doob.l_star is None else cfg.doob.l_star
    stds = step_stds(cfg.schedule, cfg.kernel)
    for l in range(2, l_star + 1):
        if stds[l - 1] <= 0.0:
            raise ConfigError(
                f"corrected step {l} is deterministic under kernel "
                f"{cfg.kernel.name!r} (eta = {cfg.kernel.eta}); corrections "
                "need stochastic transitions"
            )
