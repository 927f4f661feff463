"""Terminal rewards and the event functions h built from them.

A reward is any function of the terminal sample with a declared upper bound
r_max. The bound matters because the steering target is defined through an
auxiliary acceptance event whose probability must stay in [0, 1]:

* exp_tilt(tau): h(x) = exp((r(x) - r_max) / tau). Conditioning the diffusion
  on this event reweights the data law by exp(r / tau).
* indicator(r0): h(x) = 1{r(x) >= r0}, conditioning on clearing a threshold
  (ties accepted).
* ratio_event(C_q, ratio): h(x) = ratio(x) / C_q for a caller-supplied
  density ratio q/p bounded by C_q, conditioning the model law p into an
  arbitrary absolutely-continuous target q.

Every reward evaluation checks its declared bound (tolerance 1e-9) and
raises RewardBoundError on violation, so an under-declared r_max fails loud
rather than silently producing h > 1.

``shifted_weights`` is the numerically safe workhorse for Monte Carlo h
estimates: for exp_tilt it returns exp((r - rowmax) / tau) together with
log_scale = (rowmax - r_max) / tau per row, so the absolute weights are
exp(log_scale) * w. Estimates built from shifted weights are invariant to
the declared r_max, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, RewardBoundError

REWARD_KINDS = ("linear", "quadratic", "threshold_step", "named_external")
H_KINDS = ("exp_tilt", "indicator", "ratio_event")

_BOUND_TOL = 1e-9

_REGISTRY: dict[str, tuple[Callable, float]] = {}


def register_reward(name: str, fn: Callable, r_max: float) -> None:
    """Register a named reward callable (x batch -> rewards) with its bound.

    Registered callables must be pure: the same x always yields the same
    reward, with no hidden state. Everything downstream (estimator
    reproducibility, acceptance/rejection equivalence) relies on it.
    """
    if not callable(fn):
        raise ConfigError(f"reward {name!r} must be callable")
    _REGISTRY[name] = (fn, float(r_max))


def registered_reward(name: str) -> tuple[Callable, float]:
    if name not in _REGISTRY:
        raise ConfigError(f"no reward registered under {name!r}")
    return _REGISTRY[name]


@dataclass(frozen=True)
class RewardSpec:
    kind: str
    a: np.ndarray | None = None  # linear / threshold_step direction
    center: np.ndarray | None = None  # quadratic center
    scale: float = 1.0  # quadratic curvature
    r0: float = 0.0  # threshold_step cutoff
    name: str = ""  # named_external registry key
    r_max: float = np.inf  # declared upper bound, checked on every eval


def linear_reward(a, r_max: float = np.inf) -> RewardSpec:
    """r(x) = a . x. Unbounded unless the caller declares a bound."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    return RewardSpec(kind="linear", a=a, r_max=float(r_max))


def quadratic_reward(center, scale: float = 1.0) -> RewardSpec:
    """r(x) = -scale * |x - center|^2, peaking at 0 on the center."""
    if not scale > 0:
        raise ConfigError(f"quadratic scale must be positive, got {scale}")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    return RewardSpec(kind="quadratic", center=center, scale=float(scale), r_max=0.0)


def threshold_reward(a, r0: float) -> RewardSpec:
    """r(x) = 1{a . x >= r0}, a binary success reward bounded by 1."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    return RewardSpec(kind="threshold_step", a=a, r0=float(r0), r_max=1.0)


def named_reward(name: str, r_max: float | None = None) -> RewardSpec:
    """Look up a registered reward; r_max defaults to the registered bound."""
    _, registered_max = registered_reward(name)
    return RewardSpec(
        kind="named_external",
        name=name,
        r_max=registered_max if r_max is None else float(r_max),
    )


def eval_reward(spec: RewardSpec, x) -> np.ndarray:
    """Evaluate rewards for x of shape (..., d); returns shape (...,).

    Raises RewardBoundError if any value exceeds spec.r_max + 1e-9.
    """
    x = np.asarray(x, dtype=float)
    if spec.kind == "linear":
        r = np.einsum("...d,d->...", x, spec.a)
    elif spec.kind == "quadratic":
        r = -spec.scale * np.sum((x - spec.center) ** 2, axis=-1)
    elif spec.kind == "threshold_step":
        r = (np.einsum("...d,d->...", x, spec.a) >= spec.r0).astype(float)
    elif spec.kind == "named_external":
        fn, _ = registered_reward(spec.name)
        flat = x.reshape(-1, x.shape[-1])
        r = np.asarray(fn(flat), dtype=float).reshape(x.shape[:-1])
    else:
        raise ConfigError(f"unknown reward kind {spec.kind!r}")
    worst = np.max(r) if r.size else -np.inf
    if worst > spec.r_max + _BOUND_TOL:
        raise RewardBoundError(
            f"reward reached {worst}, above its declared bound {spec.r_max}; "
            "fix the declared r_max"
        )
    return r


@dataclass(frozen=True)
class HSpec:
    kind: str
    tau: float = 1.0  # exp_tilt temperature
    r0: float = 0.0  # indicator threshold
    c_q: float = 1.0  # ratio_event bound on the density ratio
    ratio: Callable | None = None  # ratio_event q/p callable

    def __post_init__(self):
        if self.kind not in H_KINDS:
            raise ConfigError(f"unknown h kind {self.kind!r}, expected {H_KINDS}")
        if self.kind == "exp_tilt" and not self.tau > 0:
            raise ConfigError(f"exp_tilt needs tau > 0, got {self.tau}")
        if self.kind == "ratio_event":
            if self.c_q < 1.0:
                raise ConfigError(f"ratio_event needs C_q >= 1, got {self.c_q}")
            if not callable(self.ratio):
                raise ConfigError("ratio_event needs a ratio callable")


def terminal_h(hspec: HSpec, rspec: RewardSpec, x) -> np.ndarray:
    """Event probability h(x) in [0, 1] at terminal points x of shape (..., d)."""
    x = np.asarray(x, dtype=float)
    if hspec.kind == "exp_tilt":
        if not np.isfinite(rspec.r_max):
            raise ConfigError(
                "exp_tilt needs a finite declared r_max to normalise h into [0, 1]"
            )
        r = eval_reward(rspec, x)
        return np.minimum(np.exp((r - rspec.r_max) / hspec.tau), 1.0)
    if hspec.kind == "indicator":
        r = eval_reward(rspec, x)
        return (r >= hspec.r0).astype(float)
    w = np.asarray(hspec.ratio(np.atleast_2d(x.reshape(-1, x.shape[-1]))), dtype=float)
    w = w.reshape(x.shape[:-1]) / hspec.c_q
    if w.size and (np.min(w) < -_BOUND_TOL or np.max(w) > 1.0 + _BOUND_TOL):
        raise RewardBoundError(
            "ratio_event values must lie in [0, C_q]; declared C_q is too small"
        )
    return np.clip(w, 0.0, 1.0)


def acceptance_event(hspec: HSpec, rspec: RewardSpec, x, u) -> np.ndarray:
    """Bernoulli acceptance u <= h(x) for uniform draws u in [0, 1)."""
    return np.asarray(u, dtype=float) <= terminal_h(hspec, rspec, x)


def shifted_weights(hspec: HSpec, rspec: RewardSpec, x) -> tuple[np.ndarray, np.ndarray]:
    """Per-row max-shifted h weights for x of shape (..., M, d).

    Returns (w, log_scale) with w of shape (..., M) and log_scale (...,)
    such that the absolute weights are exp(log_scale) * w. For exp_tilt the
    shift puts the largest weight at exactly 1, which keeps Monte Carlo
    h estimates well scaled no matter how loose the declared bound is; for
    indicator and ratio_event the weights are already absolute and
    log_scale is 0.
    """
    x = np.asarray(x, dtype=float)
    if hspec.kind == "exp_tilt":
        r = eval_reward(rspec, x)
        rowmax = np.max(r, axis=-1)
        w = np.exp((r - rowmax[..., None]) / hspec.tau)
        log_scale = (rowmax - rspec.r_max) / hspec.tau
        return w, log_scale
    w = terminal_h(hspec, rspec, x)
    return w, np.zeros(w.shape[:-1])
