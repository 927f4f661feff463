"""Noise schedule for the variance-preserving diffusion used throughout.

Forward convention: ``X_t = sqrt(abar(t)) X_0 + sqrt(1 - abar(t)) eps`` with
signal level ``abar(t) = exp(-t)``, so a unit-variance data law keeps unit
variance at every t. Sampling runs backward over a grid
``0 = t_0 < t_1 < ... < t_L = T``; step l moves the state from time t_l to
t_{l-1}.

``alpha_bar`` stored on the schedule is the single source of truth for
signal levels; kernels and oracles derive every coefficient from it rather
than re-exponentiating times on their own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateKernelError, NonMonotoneScheduleError

GRIDS = ("uniform", "log_snr")


@dataclass(frozen=True)
class NoiseSchedule:
    """Backward-sampling time grid and its signal levels.

    t has length L + 1 with t[0] = 0 and t[L] = T; alpha_bar[l] = exp(-t[l]).
    """

    T: float
    L: int
    t: np.ndarray
    alpha_bar: np.ndarray
    grid: str


def make_schedule(
    T: float,
    L: int = 20,
    grid: str = "uniform",
    log_snr_t_min: float | None = None,
) -> NoiseSchedule:
    """Build a schedule with L backward steps over horizon T.

    The uniform grid places t_l = l T / L. The log-snr grid spaces the
    interior points uniformly in log(abar / (1 - abar)) between
    ``log_snr_t_min`` (default T * 1e-3) and T, keeping t_0 = 0; this
    concentrates steps where the signal-to-noise ratio changes fastest.
    """
    if not np.isfinite(T) or T <= 0:
        raise ConfigError(f"horizon T must be positive and finite, got {T}")
    if int(L) != L or L < 1:
        raise ConfigError(f"step count L must be a positive integer, got {L}")
    if grid not in GRIDS:
        raise ConfigError(f"unknown grid {grid!r}, expected one of {GRIDS}")
    L = int(L)
    T = float(T)

    if grid == "uniform":
        t = np.arange(L + 1) * (T / L)
        t[L] = T
    else:
        t_min = T * 1e-3 if log_snr_t_min is None else float(log_snr_t_min)
        if not 0 < t_min < T:
            raise ConfigError(
                f"log_snr_t_min must lie in (0, T), got {t_min} with T={T}"
            )
        lam = np.linspace(_log_snr(t_min), _log_snr(T), L)
        interior = np.logaddexp(0.0, -lam)  # t = log(1 + exp(-lambda))
        interior[0] = t_min
        interior[-1] = T
        t = np.concatenate(([0.0], interior))

    if np.any(np.diff(t) <= 0):
        raise NonMonotoneScheduleError(f"time grid is not strictly increasing: {t}")
    return NoiseSchedule(T=T, L=L, t=t, alpha_bar=np.exp(-t), grid=grid)


def _log_snr(t: float) -> float:
    """log(abar / (1 - abar)) at time t for abar = exp(-t)."""
    return -t - np.log1p(-np.exp(-t))


def kappa_sigma(schedule: NoiseSchedule, kernel) -> float:
    """Step-size-to-noise diagnostic (T / L) * sum_l sigma_{t_l}^{-2}.

    ``kernel`` is either a KernelKind or a precomputed array of the L
    per-step standard deviations. Every sigma must be strictly positive;
    a zero raises DegenerateKernelError because the sum is undefined.

    Note that both built-in kernels are deterministic at the final step of
    any grid that reaches t_0 = 0 (the signal level there is 1), so this
    diagnostic only exists for truncated grids or synthetic sigma lists.
    """
    if isinstance(kernel, np.ndarray) or isinstance(kernel, (list, tuple)):
        sigmas = np.asarray(kernel, dtype=float)
    else:
        from .kernels import step_stds

        sigmas = step_stds(schedule, kernel)
    if sigmas.shape != (schedule.L,):
        raise ConfigError(
            f"expected {schedule.L} per-step sigmas, got shape {sigmas.shape}"
        )
    if np.any(sigmas <= 0):
        bad = int(np.argmin(sigmas)) + 1
        raise DegenerateKernelError(
            f"sigma at step l={bad} is not strictly positive; "
            "kappa_sigma is undefined for deterministic steps"
        )
    return float(schedule.T / schedule.L * np.sum(sigmas**-2.0))
