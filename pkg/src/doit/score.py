"""Closed-form score models for Gaussian and Gaussian-mixture data laws.

For data X_0 with density p_0, the noised marginal at time t under the
variance-preserving forward process is the law of
``sqrt(abar) X_0 + sqrt(1 - abar) eps`` with abar = exp(-t). Its score
(gradient of the log density in x) is what reverse-time samplers consume.

Both built-in families are isotropic, which keeps every score and Jacobian
a cheap closed form:

* gaussian(m, s^2): the marginal is N(sqrt(abar) m, v_t I) with
  v_t = abar s^2 + 1 - abar, so score(x) = -(x - sqrt(abar) m) / v_t and
  the Jacobian is -I / v_t.
* gmm: a K-component isotropic mixture stays a mixture of the per-component
  Gaussians above; responsibilities are computed in log space so distant x
  cannot overflow. With u_k = -(x - sqrt(abar) mu_k) / v_k and
  responsibilities g_k, score = sum_k g_k u_k and the Jacobian is
  sum_k g_k (u_k u_k^T - I / v_k) - score score^T.

External callables are supported for the score value only; they carry no
Jacobian, so downstream consumers must run in frozen-Jacobian mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, UnsupportedOperationError

FAMILIES = ("gaussian", "gmm", "external")

_SCORE_REGISTRY: dict[str, tuple[Callable, int]] = {}


def register_score(name: str, callback: Callable, dim: int) -> None:
    """Register an external score callable so configs can refer to it by name.

    The callable maps (x batch, t) to a score array of the same shape and
    must be pure.
    """
    if not callable(callback):
        raise ConfigError(f"score {name!r} must be callable")
    _SCORE_REGISTRY[name] = (callback, int(dim))


def registered_score(name: str) -> "ScoreModel":
    if name not in _SCORE_REGISTRY:
        raise ConfigError(f"no external score registered under {name!r}")
    callback, dim = _SCORE_REGISTRY[name]
    return external_model(callback, dim, name=name)


@dataclass(frozen=True)
class ScoreModel:
    family: str
    dim: int
    means: np.ndarray | None = None  # (K, d)
    variances: np.ndarray | None = None  # (K,) isotropic component variances
    weights: np.ndarray | None = None  # (K,) mixture weights summing to 1
    callback: Callable | None = None
    name: str = ""


@dataclass(frozen=True)
class ScoreEval:
    """A score evaluation plus what is known about its Jacobian.

    mode is "exact" when ``jacobian`` holds the analytic d x d (or n x d x d)
    Jacobian of the score at the evaluation points, "frozen" when the caller
    asked not to compute it or the model cannot provide one. The invariant
    is: jacobian is not None if and only if mode == "exact".
    """

    value: np.ndarray
    mode: str
    jacobian: np.ndarray | None = None


def gaussian_model(mean, var: float) -> ScoreModel:
    """Unit-component model for data N(mean, var * I)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if mean.ndim != 1:
        raise ConfigError(f"gaussian mean must be a vector, got shape {mean.shape}")
    if not var > 0:
        raise ConfigError(f"gaussian variance must be positive, got {var}")
    return ScoreModel(
        family="gaussian",
        dim=mean.shape[0],
        means=mean[None, :],
        variances=np.array([float(var)]),
        weights=np.array([1.0]),
    )


def gmm_model(means, variances, weights) -> ScoreModel:
    """Isotropic Gaussian-mixture model with K components."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    variances = np.atleast_1d(np.asarray(variances, dtype=float))
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    K = means.shape[0]
    if variances.shape != (K,) or weights.shape != (K,):
        raise ConfigError(
            "gmm needs one variance and one weight per component: "
            f"means {means.shape}, variances {variances.shape}, weights {weights.shape}"
        )
    if np.any(variances <= 0):
        raise ConfigError("gmm component variances must be positive")
    if np.any(weights <= 0) or not np.isclose(weights.sum(), 1.0, atol=1e-12):
        raise ConfigError("gmm weights must be positive and sum to 1")
    return ScoreModel(
        family="gmm", dim=means.shape[1], means=means, variances=variances,
        weights=weights,
    )


def external_model(callback: Callable, dim: int, name: str = "") -> ScoreModel:
    """Wrap a user-supplied score function (x, t) -> score array."""
    if not callable(callback):
        raise ConfigError("external score model needs a callable")
    return ScoreModel(family="external", dim=int(dim), callback=callback, name=name)


def eval_score(
    model: ScoreModel, x, t: float, with_jacobian: bool = False
) -> ScoreEval:
    """Evaluate the score of the time-t marginal at x.

    x may be a single point (d,) or a batch (n, d); the returned value
    matches that shape and the Jacobian, when requested, is (d, d) or
    (n, d, d). Requesting a Jacobian from an external model raises
    UnsupportedOperationError.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.dim:
        raise ConfigError(f"expected dim {model.dim}, got points of dim {X.shape[1]}")
    t = float(t)
    if t < 0:
        raise ConfigError(f"time must be nonnegative, got {t}")

    if model.family == "external":
        if with_jacobian:
            raise UnsupportedOperationError(
                "external score models provide values only; use frozen Jacobian mode"
            )
        val = np.asarray(model.callback(X, t), dtype=float)
        if val.shape != X.shape:
            raise ConfigError(
                f"external score returned shape {val.shape}, expected {X.shape}"
            )
        return ScoreEval(value=val[0] if single else val, mode="frozen")

    abar = np.exp(-t)
    root_abar = np.exp(-t / 2.0)
    v = abar * model.variances + (1.0 - abar)  # (K,) marginal component variances

    if model.family == "gaussian":
        val = -(X - root_abar * model.means[0]) / v[0]
        jac = None
        if with_jacobian:
            jac = np.broadcast_to(
                -np.eye(model.dim) / v[0], (X.shape[0], model.dim, model.dim)
            )
            jac = jac[0] if single else jac
        return ScoreEval(
            value=val[0] if single else val,
            mode="exact" if with_jacobian else "frozen",
            jacobian=jac,
        )

    # gmm: responsibilities in log space
    d = model.dim
    diff = X[:, None, :] - root_abar * model.means[None, :, :]  # (n, K, d)
    log_w = (
        np.log(model.weights)
        - 0.5 * np.sum(diff**2, axis=2) / v
        - 0.5 * d * np.log(2.0 * np.pi * v)
    )  # (n, K)
    log_norm = logsumexp(log_w, axis=1, keepdims=True)
    resp = np.exp(log_w - log_norm)  # (n, K)
    u = -diff / v[None, :, None]  # (n, K, d)
    val = np.sum(resp[:, :, None] * u, axis=1)  # (n, d)

    jac = None
    if with_jacobian:
        outer = np.einsum("nk,nki,nkj->nij", resp, u, u)
        iso = np.sum(resp / v, axis=1)  # (n,)
        jac = outer - val[:, :, None] * val[:, None, :]
        jac -= iso[:, None, None] * np.eye(d)
        jac = jac[0] if single else jac
    return ScoreEval(
        value=val[0] if single else val,
        mode="exact" if with_jacobian else "frozen",
        jacobian=jac,
    )


def score_jacobian(model: ScoreModel, x, t: float) -> np.ndarray:
    """Analytic Jacobian of the score at x, or UnsupportedOperationError."""
    return eval_score(model, x, t, with_jacobian=True).jacobian
