"""Backward transition kernels on the variance-preserving state convention.

Both kernels map the state at time t_l to time t_{l-1} through a Gaussian
whose mean is affine in the score evaluated at the parent state:

    mean = lin_coeff * x + score_coeff * score(x, t_l),    std = sigma_l.

Writing a = abar_l and b = abar_{l-1} (so b > a on a valid grid):

* ddim(eta): variance sigma^2 = eta^2 (1-b)/(1-a) (1 - a/b); the mean
  interpolates the noise-prediction form
  ``sqrt(b/a) x + (sqrt(1-b-sigma^2) - sqrt(1-a) sqrt(b/a)) eps_hat`` with
  eps_hat = -sqrt(1-a) score. eta = 0 is the deterministic probability-flow
  step, eta = 1 the fully stochastic ancestral step.
* euler_ancestral: the classic ancestral update in noise-scale coordinates
  x~ = x / sqrt(abar) with levels sigma~_l = sqrt((1-abar_l)/abar_l):
  x~ <- x~ + eps_hat (sigma_down - sigma~_l) + sigma_up z, where
  sigma_up^2 = (sigma~_{l-1}^2 / sigma~_l^2)(sigma~_l^2 - sigma~_{l-1}^2)
  and sigma_down^2 = sigma~_{l-1}^2 - sigma_up^2. The result is expressed
  back in the shared state convention (multiply by sqrt(b)). On any common
  grid this coincides with ddim at eta = 1, coefficient for coefficient.

The affine form is exact, so d mean / d x = lin_coeff I + score_coeff J
with J the score Jacobian, and transition log-density gradients have the
closed form used by the h estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegenerateTransitionError,
    NonMonotoneScheduleError,
    ScheduleInconsistencyError,
    UnsupportedOperationError,
)
from .schedule import NoiseSchedule

KERNELS = ("ddim", "euler_ancestral")

_SQRT_TOL = 1e-12


@dataclass(frozen=True)
class KernelKind:
    """Which transition kernel to use; eta only applies to ddim."""

    name: str = "ddim"
    eta: float = 1.0

    def __post_init__(self):
        if self.name not in KERNELS:
            raise ConfigError(f"unknown kernel {self.name!r}, expected {KERNELS}")
        if self.name == "ddim" and not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"ddim eta must lie in [0, 1], got {self.eta}")


@dataclass(frozen=True)
class TransitionMoments:
    """Gaussian moments of one backward step, plus the affine coefficients
    needed for exact differentiation of the mean."""

    mean: np.ndarray
    std: float
    lin_coeff: float
    score_coeff: float


def _safe_sqrt(arg: float, context: str) -> float:
    """sqrt that forgives roundoff-level negatives and rejects real ones."""
    if arg < -_SQRT_TOL:
        raise ScheduleInconsistencyError(
            f"{context}: needed sqrt({arg}), signal levels are inconsistent"
        )
    return float(np.sqrt(max(arg, 0.0)))


def _check_step(schedule: NoiseSchedule, l: int) -> tuple[float, float]:
    if not 1 <= l <= schedule.L:
        raise ConfigError(f"step index l must lie in [1, {schedule.L}], got {l}")
    a = float(schedule.alpha_bar[l])
    b = float(schedule.alpha_bar[l - 1])
    return a, b


def transition_coeffs(
    schedule: NoiseSchedule, l: int, kind: KernelKind
) -> tuple[float, float, float]:
    """Return (lin_coeff, score_coeff, std) of backward step l."""
    a, b = _check_step(schedule, l)
    if kind.name == "ddim":
        if b < a:
            raise ScheduleInconsistencyError(
                f"signal level must not increase backward in time: "
                f"abar_{l}={a} > abar_{l - 1}={b}"
            )
        var = kind.eta**2 * ((1.0 - b) / (1.0 - a)) * (1.0 - a / b) if a < 1.0 else 0.0
        lin = _safe_sqrt(b / a, "ddim lin coefficient")
        eps_coeff = _safe_sqrt(1.0 - b - var, "ddim mean") - _safe_sqrt(1.0 - a, "ddim mean") * lin
        score_coeff = -eps_coeff * np.sqrt(1.0 - a)
        return lin, float(score_coeff), _safe_sqrt(var, "ddim std")

    st_l2 = (1.0 - a) / a
    st_p2 = (1.0 - b) / b
    if st_p2 >= st_l2:
        raise NonMonotoneScheduleError(
            f"noise scale must strictly decrease backward in time at step {l}: "
            f"sigma~_{l - 1}^2={st_p2} >= sigma~_{l}^2={st_l2}"
        )
    st_l = np.sqrt(st_l2)
    up2 = (st_p2 / st_l2) * (st_l2 - st_p2)
    down = _safe_sqrt(st_p2 - up2, "euler_ancestral sigma_down")
    lin = np.sqrt(b / a)
    eps_coeff = np.sqrt(b) * (down - st_l)
    score_coeff = -eps_coeff * np.sqrt(1.0 - a)
    return float(lin), float(score_coeff), float(np.sqrt(b * up2))


def edm_sigmas(schedule: NoiseSchedule, l: int) -> dict[str, float]:
    """Noise-scale quantities of the ancestral step, for inspection/tests.

    Keys: sigma_l, sigma_prev (the levels sqrt((1-abar)/abar) at t_l and
    t_{l-1}), sigma_up, sigma_down.
    """
    a, b = _check_step(schedule, l)
    st_l2 = (1.0 - a) / a
    st_p2 = (1.0 - b) / b
    if st_p2 >= st_l2:
        raise NonMonotoneScheduleError(
            f"noise scale must strictly decrease backward in time at step {l}"
        )
    up2 = (st_p2 / st_l2) * (st_l2 - st_p2)
    return {
        "sigma_l": float(np.sqrt(st_l2)),
        "sigma_prev": float(np.sqrt(st_p2)),
        "sigma_up": float(np.sqrt(up2)),
        "sigma_down": float(np.sqrt(st_p2 - up2)),
    }


def transition_moments(
    schedule: NoiseSchedule, l: int, kind: KernelKind, x, score_value
) -> TransitionMoments:
    """Gaussian moments of step l at parent state x with the given score."""
    lin, sc, std = transition_coeffs(schedule, l, kind)
    x = np.asarray(x, dtype=float)
    s = np.asarray(score_value, dtype=float)
    return TransitionMoments(mean=lin * x + sc * s, std=std, lin_coeff=lin,
                             score_coeff=sc)


def ddim_moments(
    schedule: NoiseSchedule, l: int, x, score_value, eta: float = 1.0
) -> TransitionMoments:
    return transition_moments(schedule, l, KernelKind("ddim", eta), x, score_value)


def euler_ancestral_moments(
    schedule: NoiseSchedule, l: int, x, score_value
) -> TransitionMoments:
    return transition_moments(schedule, l, KernelKind("euler_ancestral"), x, score_value)


def kernel_step(moments: TransitionMoments, noise) -> np.ndarray:
    """Apply one backward step: mean + std * noise."""
    return moments.mean + moments.std * np.asarray(noise, dtype=float)


def step_stds(schedule: NoiseSchedule, kind: KernelKind) -> np.ndarray:
    """Per-step standard deviations (sigma_{t_1}, ..., sigma_{t_L})."""
    return np.array(
        [transition_coeffs(schedule, l, kind)[2] for l in range(1, schedule.L + 1)]
    )


def tweedie_x0(x, score_value, t: float) -> np.ndarray:
    """Posterior-mean denoiser E[X_0 | X_t = x] from the score at (x, t)."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(score_value, dtype=float)
    abar = np.exp(-float(t))
    return (x + (1.0 - abar) * s) / np.sqrt(abar)


def surrogate_x0(y, parent_score_value, t_child: float) -> np.ndarray:
    """Cheap terminal predictor for a lookahead child y at time t_child.

    Reuses the score already evaluated at the parent state instead of
    evaluating a new one at (y, t_child), so it costs zero extra score
    evaluations: x0_hat = (y + (1 - abar_child) * parent_score) /
    sqrt(abar_child). At t_child = 0 this returns y unchanged.
    """
    y = np.asarray(y, dtype=float)
    s = np.asarray(parent_score_value, dtype=float)
    abar = np.exp(-float(t_child))
    return (y + (1.0 - abar) * s) / np.sqrt(abar)


def transition_logdensity_grad(
    moments: TransitionMoments, y, score_jacobian=None, mode: str = "frozen"
) -> np.ndarray:
    """Gradient in the parent x of log N(y; mean(x), std^2 I).

    Equals (d mean / d x)^T (y - mean) / std^2. In frozen mode the score is
    treated as constant in x, so d mean / d x = lin_coeff I. In exact mode
    d mean / d x = lin_coeff I + score_coeff J with J the score Jacobian at
    the parent point, which must be supplied.
    """
    if moments.std <= 0.0:
        raise DegenerateTransitionError(
            "transition log-density gradient undefined for a zero-variance step"
        )
    if mode not in ("frozen", "exact"):
        raise ConfigError(f"unknown jacobian mode {mode!r}")
    r = np.asarray(y, dtype=float) - moments.mean
    out = moments.lin_coeff * r
    if mode == "exact":
        if score_jacobian is None:
            raise UnsupportedOperationError(
                "exact mode needs a score Jacobian; this model only provides values"
            )
        J = np.asarray(score_jacobian, dtype=float)
        if J.ndim == 2:
            out = out + moments.score_coeff * np.einsum("ij,...i->...j", J, r)
        elif J.ndim == 3 and r.ndim == 3:
            out = out + moments.score_coeff * np.einsum("nij,nmi->nmj", J, r)
        elif J.ndim == 3 and r.ndim == 2:
            out = out + moments.score_coeff * np.einsum("nij,ni->nj", J, r)
        else:
            raise ConfigError(
                f"cannot broadcast score Jacobian {J.shape} against residual {r.shape}"
            )
    return out / moments.std**2
