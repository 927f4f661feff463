"""Monte Carlo estimation of the conditional-event score correction.

Let h(x, t_l) be the probability that the terminal sample of the backward
chain started at X_{t_l} = x lands in the steering event. The chain
conditioned on that event follows the same kernels with the score replaced
by score + grad log h, so everything reduces to estimating grad log h at the
current state.

Write mu(x) and sigma for the moments of the next transition and y^(m) for
lookahead children y = mu(x) + sigma z^(m). With per-lookahead event weights
w^(m) (terminal_h evaluated at a terminal predictor for each child),

    h_hat      = mean_m w^(m),
    grad h_hat = mean_m w^(m) g^(m),
    g^(m)      = (d mu / d x)^T (y^(m) - mu(x)) / sigma^2,

and the reported gradient of log h is grad h_hat / max(h_hat, eta) with a
truncation level eta that protects against exploding estimates when h_hat
is tiny. Only the first transition is differentiated; the lookahead beyond
it enters through the weights alone, which is what makes the estimator a
single-step-gradient one.

Two lookahead flavours are provided:

* surrogate: jump straight from the child y to a terminal predictor that
  reuses the parent score (zero extra score evaluations);
* rollout: run the full uncorrected chain from each child down to t_0
  (M * (l - 1) extra score evaluations per estimate) and weight by the true
  terminal event function. Its h_hat and grad h_hat are unbiased for the
  discrete chain's h and grad h.

Both flavours consume the supplied generator starting with the same
(n, M, d) child-noise draw, so paired comparisons can share lookahead noise
by passing identically keyed generators.

For exp_tilt events the weights are max-shifted per estimate (see
reward.shifted_weights); h_hat is then the shifted estimate in [1/M, 1] and
the absolute quantities are exp(log_scale) * h_hat and
exp(log_scale) * grad_h_hat. grad log h is unaffected by the shift whenever
truncation is inactive, and the truncation decision itself is taken on the
shifted h_hat, which makes the whole estimate invariant to the declared
reward bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateTransitionError, UnsupportedOperationError
from .kernels import KernelKind, surrogate_x0, transition_coeffs
from .reward import HSpec, RewardSpec, shifted_weights
from .schedule import NoiseSchedule
from .score import ScoreEval, ScoreModel, eval_score
from . import streams

ESTIMATORS = ("surrogate", "rollout")
JACOBIAN_MODES = ("exact", "frozen")


@dataclass(frozen=True)
class DoobConfig:
    """Knobs of the correction estimator.

    m is the lookahead count, gamma the correction strength multiplying
    grad log h in the corrected score, l_star the largest step index at
    which corrections are applied (None means every step), eta_rule the
    truncation level policy ("auto" for min(m^(-1/6), 1/e), a float for a
    fixed level, "none" to disable truncation).
    """

    m: int = 32
    gamma: float = 1.0
    l_star: int | None = None
    eta_rule: str | float = "auto"
    estimator: str = "surrogate"
    jacobian: str = "exact"

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"lookahead count m must be a positive integer, got {self.m}")
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.l_star is not None and (int(self.l_star) != self.l_star or self.l_star < 1):
            raise ConfigError(f"l_star must be a positive integer or None, got {self.l_star}")
        if isinstance(self.eta_rule, str):
            if self.eta_rule not in ("auto", "none"):
                raise ConfigError(
                    f"eta_rule must be 'auto', 'none', or a float, got {self.eta_rule!r}"
                )
        elif not float(self.eta_rule) >= 0:
            raise ConfigError(f"fixed eta must be nonnegative, got {self.eta_rule}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}, expected {ESTIMATORS}")
        if self.jacobian not in JACOBIAN_MODES:
            raise ConfigError(f"unknown jacobian mode {self.jacobian!r}")


@dataclass(frozen=True)
class DoobEstimate:
    """One estimate of the event probability and its log-gradient.

    h_hat and grad_h_hat are on the max-shifted scale; multiply by
    exp(log_scale) for absolute values. grad_log_h_hat is exactly
    grad_h_hat / max(h_hat, eta). nfe_added counts extra score evaluations
    beyond the base chain (0 for surrogate, m * (l - 1) for rollout).
    """

    h_hat: float
    grad_h_hat: np.ndarray
    grad_log_h_hat: np.ndarray
    truncation_active: bool
    nfe_added: int
    log_scale: float = 0.0


def truncation_level(m: int, rule: str | float = "auto") -> float:
    """Denominator floor eta for the log-gradient.

    "auto" uses min(m^(-1/6), e^(-1)): vanishing as the lookahead budget
    grows, capped so a handful of lookaheads is never floored above 1/e.
    """
    if isinstance(rule, str):
        if rule == "none":
            return 0.0
        if rule != "auto":
            raise ConfigError(f"unknown eta rule {rule!r}")
        return float(min(m ** (-1.0 / 6.0), np.exp(-1.0)))
    eta = float(rule)
    if eta < 0:
        raise ConfigError(f"fixed eta must be nonnegative, got {eta}")
    return eta


def _first_transition_grad(
    z: np.ndarray, lin: float, sc: float, sigma: float, jacobian: np.ndarray | None
) -> np.ndarray:
    """g^(m) = (d mu / d x)^T (y - mu) / sigma^2 with y - mu = sigma * z.

    z has shape (n, M, d); jacobian, when given, has shape (n, d, d).
    """
    g = (lin / sigma) * z
    if jacobian is not None:
        g = g + (sc / sigma) * np.einsum("nij,nmi->nmj", jacobian, z)
    return g


def _finish(
    w: np.ndarray, g: np.ndarray, log_scale: np.ndarray, eta: float
) -> dict[str, np.ndarray]:
    h = np.mean(w, axis=1)
    grad_h = np.mean(w[:, :, None] * g, axis=1)
    denom = np.maximum(h, eta)
    trunc = (h < eta) | (h == 0.0)
    grad_log = np.zeros_like(grad_h)
    np.divide(grad_h, denom[:, None], out=grad_log, where=denom[:, None] > 0.0)
    return {
        "h_hat": h,
        "grad_h_hat": grad_h,
        "grad_log_h_hat": grad_log,
        "truncation_active": trunc,
        "log_scale": log_scale,
    }


def _check_estimate_step(
    schedule: NoiseSchedule, l: int, kind: KernelKind
) -> tuple[float, float, float]:
    if l == 1:
        raise DegenerateTransitionError(
            "no lookahead transition exists below step 1; corrections start at l = 2"
        )
    lin, sc, sigma = transition_coeffs(schedule, l, kind)
    if sigma <= 0.0:
        raise DegenerateTransitionError(
            f"step {l} is deterministic (sigma = 0); the correction estimator "
            "needs a stochastic transition"
        )
    return lin, sc, sigma


def surrogate_estimate_arrays(
    x: np.ndarray,
    l: int,
    score: ScoreEval,
    schedule: NoiseSchedule,
    kind: KernelKind,
    hspec: HSpec,
    rspec: RewardSpec,
    cfg: DoobConfig,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Batched surrogate estimates at points x (n, d) sharing step l."""
    lin, sc, sigma = _check_estimate_step(schedule, l, kind)
    jac = _need_jacobian(cfg, score)
    n, d = x.shape
    z = rng.standard_normal((n, cfg.m, d))
    mu = lin * x + sc * score.value
    y = mu[:, None, :] + sigma * z
    x0 = surrogate_x0(y, score.value[:, None, :], schedule.t[l - 1])
    w, log_scale = shifted_weights(hspec, rspec, x0)
    g = _first_transition_grad(z, lin, sc, sigma, jac)
    out = _finish(w, g, log_scale, truncation_level(cfg.m, cfg.eta_rule))
    out["nfe_rows"] = 0
    return out


def rollout_estimate_arrays(
    x: np.ndarray,
    l: int,
    score: ScoreEval,
    model: ScoreModel,
    schedule: NoiseSchedule,
    kind: KernelKind,
    hspec: HSpec,
    rspec: RewardSpec,
    cfg: DoobConfig,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Batched rollout estimates: children are completed to t_0 by the
    uncorrected chain and weighted by the true terminal event function."""
    lin, sc, sigma = _check_estimate_step(schedule, l, kind)
    jac = _need_jacobian(cfg, score)
    n, d = x.shape
    z = rng.standard_normal((n, cfg.m, d))
    mu = lin * x + sc * score.value
    state = (mu[:, None, :] + sigma * z).reshape(n * cfg.m, d)
    nfe_rows = 0
    for j in range(l - 1, 0, -1):
        s_j = eval_score(model, state, schedule.t[j])
        nfe_rows += state.shape[0]
        lin_j, sc_j, sigma_j = transition_coeffs(schedule, j, kind)
        state = lin_j * state + sc_j * s_j.value
        if sigma_j > 0.0:
            state = state + sigma_j * rng.standard_normal(state.shape)
    w, log_scale = shifted_weights(hspec, rspec, state.reshape(n, cfg.m, d))
    g = _first_transition_grad(z, lin, sc, sigma, jac)
    out = _finish(w, g, log_scale, truncation_level(cfg.m, cfg.eta_rule))
    out["nfe_rows"] = nfe_rows
    return out


def _need_jacobian(cfg: DoobConfig, score: ScoreEval) -> np.ndarray | None:
    if cfg.jacobian == "frozen":
        return None
    if score.jacobian is None:
        raise UnsupportedOperationError(
            "exact jacobian mode requested but the score evaluation carries none"
        )
    return score.jacobian


def _as_estimate(arrays: dict[str, np.ndarray], nfe_added: int) -> DoobEstimate:
    return DoobEstimate(
        h_hat=float(arrays["h_hat"][0]),
        grad_h_hat=arrays["grad_h_hat"][0],
        grad_log_h_hat=arrays["grad_log_h_hat"][0],
        truncation_active=bool(arrays["truncation_active"][0]),
        nfe_added=nfe_added,
        log_scale=float(arrays["log_scale"][0]),
    )


def _resolve_rng(rng, l: int) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return streams.stream(int(rng), streams.LOOKAHEAD, l)


def estimate_surrogate(
    x,
    l: int,
    model: ScoreModel,
    schedule: NoiseSchedule,
    kind: KernelKind,
    hspec: HSpec,
    rspec: RewardSpec,
    cfg: DoobConfig,
    rng,
) -> DoobEstimate:
    """Surrogate estimate at a single point x (d,); rng is a Generator or a
    seed keyed into the lookahead stream family for step l."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    score = eval_score(model, x, schedule.t[l], with_jacobian=cfg.jacobian == "exact")
    arrays = surrogate_estimate_arrays(
        x, l, score, schedule, kind, hspec, rspec, cfg, _resolve_rng(rng, l)
    )
    return _as_estimate(arrays, nfe_added=0)


def estimate_rollout(
    x,
    l: int,
    model: ScoreModel,
    schedule: NoiseSchedule,
    kind: KernelKind,
    hspec: HSpec,
    rspec: RewardSpec,
    cfg: DoobConfig,
    rng,
) -> DoobEstimate:
    """Rollout estimate at a single point x (d,); costs m * (l - 1) extra
    score evaluations."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    score = eval_score(model, x, schedule.t[l], with_jacobian=cfg.jacobian == "exact")
    arrays = rollout_estimate_arrays(
        x, l, score, model, schedule, kind, hspec, rspec, cfg, _resolve_rng(rng, l)
    )
    return _as_estimate(arrays, nfe_added=cfg.m * (l - 1))
