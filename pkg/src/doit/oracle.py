"""Closed-form references for the linear-Gaussian case.

With a Gaussian data law and either built-in kernel, every backward
transition has a mean affine in the state (the score itself is affine), so
the conditional law of X_0 given X_{t_l} = x is an explicit Gaussian
N(A x + b, C) obtained by composing per-step affine maps. From it, the
event probability h and its log-gradient have closed forms for linear
rewards:

* exp_tilt: E[exp((a . X_0 - r_max) / tau) | x] via the Gaussian moment
  generating function; grad log h = A^T a / tau, constant in x.
* indicator: P(a . X_0 >= r0 | x) = Phi(z) with
  z = (a . (A x + b) - r0) / sqrt(a^T C a); grad log h is the inverse Mills
  ratio times A^T a / sqrt(a^T C a).

The tilted target law exp(r / tau) * p for a Gaussian p = N(m, s^2 I) and
linear reward is again Gaussian, N(m + s^2 a / tau, s^2 I), which gives two
independent routes to the same distribution: direct draws from the closed
form, and rejection sampling of the event against the base law. Their
agreement, and the acceptance rate matching the closed-form event
probability, is the strongest end-to-end check in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import streams
from .errors import ConfigError, LowAcceptanceError, UnsupportedOperationError
from .kernels import KernelKind, transition_coeffs
from .reward import HSpec, RewardSpec, acceptance_event
from .schedule import NoiseSchedule
from .score import ScoreModel


@dataclass(frozen=True)
class AffineLaw:
    """Conditional law N(A x + b, C) of a downstream state given x."""

    A: np.ndarray
    b: np.ndarray
    C: np.ndarray


def _require_gaussian(model: ScoreModel, what: str) -> tuple[np.ndarray, float]:
    if model.family != "gaussian":
        raise UnsupportedOperationError(f"{what} has closed form only for gaussian models")
    return model.means[0], float(model.variances[0])


def _require_linear(rspec: RewardSpec, what: str) -> np.ndarray:
    if rspec.kind != "linear":
        raise UnsupportedOperationError(f"{what} has closed form only for linear rewards")
    return rspec.a


def affine_step_law(
    model: ScoreModel, schedule: NoiseSchedule, kind: KernelKind, l: int
) -> AffineLaw:
    """One backward step as an affine-Gaussian map X_{t_{l-1}} | X_{t_l}.

    For a Gaussian model the score at time t is -(x - sqrt(abar) m) / v with
    v = abar s^2 + 1 - abar, so the transition mean
    lin x + sc score(x) = (lin - sc / v) x + sc sqrt(abar) m / v.
    """
    m, s2 = _require_gaussian(model, "affine step law")
    lin, sc, sigma = transition_coeffs(schedule, l, kind)
    abar = float(schedule.alpha_bar[l])
    v = abar * s2 + (1.0 - abar)
    d = model.dim
    eye = np.eye(d)
    return AffineLaw(
        A=(lin - sc / v) * eye,
        b=(sc * np.sqrt(abar) / v) * m,
        C=sigma**2 * eye,
    )


def compose_affine(first: AffineLaw, then: AffineLaw) -> AffineLaw:
    """Law of applying ``first`` and then ``then`` to its output."""
    return AffineLaw(
        A=then.A @ first.A,
        b=then.A @ first.b + then.b,
        C=then.A @ first.C @ then.A.T + then.C,
    )


def backward_affine_law(
    model: ScoreModel, schedule: NoiseSchedule, kind: KernelKind, l: int
) -> AffineLaw:
    """Conditional law of the terminal sample X_0 given X_{t_l} = x."""
    if not 0 <= l <= schedule.L:
        raise ConfigError(f"l must lie in [0, {schedule.L}], got {l}")
    d = model.dim
    law = AffineLaw(A=np.eye(d), b=np.zeros(d), C=np.zeros((d, d)))
    for j in range(l, 0, -1):
        law = compose_affine(law, affine_step_law(model, schedule, kind, j))
    return law


def _event_moments(law: AffineLaw, rspec: RewardSpec, x) -> tuple[np.ndarray, float]:
    """Mean and variance of a . X_0 given x, for linear rewards."""
    a = _require_linear(rspec, "exact h")
    x = np.asarray(x, dtype=float)
    mean_r = np.einsum("...d,d->...", x, law.A.T @ a) + float(a @ law.b)
    var_r = float(max(a @ law.C @ a, 0.0))
    return mean_r, var_r


def exact_log_h(law: AffineLaw, hspec: HSpec, rspec: RewardSpec, x) -> np.ndarray:
    """log h(x) for the conditional law; supports exp_tilt and indicator."""
    mean_r, var_r = _event_moments(law, rspec, x)
    if hspec.kind == "exp_tilt":
        if not np.isfinite(rspec.r_max):
            raise ConfigError("exp_tilt closed form needs a finite declared r_max")
        return (mean_r - rspec.r_max) / hspec.tau + var_r / (2.0 * hspec.tau**2)
    if hspec.kind == "indicator":
        if var_r == 0.0:
            return np.where(mean_r >= hspec.r0, 0.0, -np.inf)
        return norm.logcdf((mean_r - hspec.r0) / np.sqrt(var_r))
    raise UnsupportedOperationError(f"no closed-form h for kind {hspec.kind!r}")


def exact_h(law: AffineLaw, hspec: HSpec, rspec: RewardSpec, x) -> np.ndarray:
    return np.exp(exact_log_h(law, hspec, rspec, x))


def exact_grad_log_h(law: AffineLaw, hspec: HSpec, rspec: RewardSpec, x) -> np.ndarray:
    """Gradient in x of log h(x); shape matches x."""
    a = _require_linear(rspec, "exact grad log h")
    x = np.asarray(x, dtype=float)
    w = law.A.T @ a
    if hspec.kind == "exp_tilt":
        return np.broadcast_to(w / hspec.tau, x.shape).copy()
    if hspec.kind == "indicator":
        mean_r, var_r = _event_moments(law, rspec, x)
        if var_r == 0.0:
            raise UnsupportedOperationError(
                "indicator grad log h undefined for a deterministic conditional law"
            )
        sd = np.sqrt(var_r)
        z = (mean_r - hspec.r0) / sd
        mills = np.exp(norm.logpdf(z) - norm.logcdf(z))
        return mills[..., None] * (w / sd)
    raise UnsupportedOperationError(f"no closed-form grad for kind {hspec.kind!r}")


def tilted_gaussian_target(
    model: ScoreModel, rspec: RewardSpec, hspec: HSpec
) -> tuple[np.ndarray, float]:
    """Mean and isotropic variance of exp(r / tau) * N(m, s^2 I) renormalised."""
    m, s2 = _require_gaussian(model, "tilted target")
    a = _require_linear(rspec, "tilted target")
    if hspec.kind != "exp_tilt":
        raise UnsupportedOperationError("tilted target is defined for exp_tilt only")
    return m + s2 * a / hspec.tau, s2


def sample_tilted_target(
    model: ScoreModel, rspec: RewardSpec, hspec: HSpec, n: int, seed: int
) -> np.ndarray:
    """Direct draws from the closed-form tilted Gaussian target."""
    mean, var = tilted_gaussian_target(model, rspec, hspec)
    rng = streams.stream(seed, streams.TARGET)
    return mean + np.sqrt(var) * rng.standard_normal((int(n), model.dim))


def data_law_sample(model: ScoreModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from the model's data law (gaussian or gmm)."""
    if model.family not in ("gaussian", "gmm"):
        raise UnsupportedOperationError("can only sample built-in analytic data laws")
    n = int(n)
    comp = (
        np.zeros(n, dtype=int)
        if model.means.shape[0] == 1
        else rng.choice(model.means.shape[0], size=n, p=model.weights)
    )
    z = rng.standard_normal((n, model.dim))
    return model.means[comp] + np.sqrt(model.variances[comp])[:, None] * z


def exact_acceptance_rate(model: ScoreModel, rspec: RewardSpec, hspec: HSpec) -> float:
    """Marginal event probability P(E) = E[h(X_0)] under the data law.

    Its inverse is the normalising constant of the tilted target, so the
    rejection sampler's empirical acceptance rate must converge to it.
    """
    m, s2 = _require_gaussian(model, "exact acceptance rate")
    a = _require_linear(rspec, "exact acceptance rate")
    if hspec.kind == "exp_tilt":
        if not np.isfinite(rspec.r_max):
            raise ConfigError("exp_tilt acceptance rate needs a finite declared r_max")
        return float(
            np.exp(
                (a @ m - rspec.r_max) / hspec.tau
                + s2 * (a @ a) / (2.0 * hspec.tau**2)
            )
        )
    if hspec.kind == "indicator":
        sd = np.sqrt(s2 * (a @ a))
        return float(norm.cdf((a @ m - hspec.r0) / sd))
    raise UnsupportedOperationError(f"no closed-form rate for kind {hspec.kind!r}")


def rejection_sample_target(
    model: ScoreModel,
    hspec: HSpec,
    rspec: RewardSpec,
    n: int,
    seed: int,
    floor: float = 1e-4,
    floor_window: int = 100_000,
) -> tuple[np.ndarray, float]:
    """Exact draws from the conditioned law h(x) p(x) / P(E) by rejection.

    Proposes from the model's data law and accepts each x with probability
    h(x). Once at least ``floor_window`` proposals have been consumed, an
    empirical acceptance rate below ``floor`` aborts with
    LowAcceptanceError rather than burning unbounded compute. Returns the
    accepted samples and the overall empirical acceptance rate.
    """
    if int(n) != n or n < 1:
        raise ConfigError(f"sample count n must be a positive integer, got {n}")
    n = int(n)
    rng = streams.stream(seed, streams.REJECTION)
    accepted: list[np.ndarray] = []
    got = 0
    proposed = 0
    while got < n:
        rate_est = max(got / proposed, 1e-8) if proposed else 1.0
        batch = int(np.clip((n - got) / rate_est * 1.2, 10_000, 5_000_000))
        x = data_law_sample(model, batch, rng)
        u = rng.random(batch)
        keep = acceptance_event(hspec, rspec, x, u)
        proposed += batch
        take = x[keep]
        accepted.append(take)
        got += take.shape[0]
        if proposed >= floor_window and got / proposed < floor:
            raise LowAcceptanceError(
                f"acceptance rate {got / proposed:.3g} after {proposed} proposals "
                f"is below the floor {floor}; raise tau or lower the bar"
            )
    out = np.concatenate(accepted, axis=0)[:n]
    return out, got / proposed


def finite_difference_grad(f, x, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function at x (d,)."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def linear_reward_bound(model: ScoreModel, a, k: float = 8.0) -> float:
    """Supremum of a . x over the data law's mean +- k std bounding box.

    A convention for declaring r_max on effectively unbounded linear
    rewards: mass outside the box is negligible for k = 8 and the declared
    bound stays within a few tau of realised rewards, keeping tilted
    weights well scaled.
    """
    if model.family not in ("gaussian", "gmm"):
        raise UnsupportedOperationError("reward bound needs an analytic data law")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    per_comp = model.means @ a + k * np.sqrt(model.variances) * np.sum(np.abs(a))
    return float(np.max(per_comp))
