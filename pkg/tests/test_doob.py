import numpy as np
import pytest

from doit import (
    ConfigError,
    DegenerateTransitionError,
    DoobConfig,
    HSpec,
    KernelKind,
    UnsupportedOperationError,
    backward_affine_law,
    estimate_rollout,
    estimate_surrogate,
    exact_grad_log_h,
    external_model,
    gaussian_model,
    linear_reward,
    make_schedule,
    threshold_reward,
    truncation_level,
)
from doit import streams
from doit.doob import rollout_estimate_arrays, surrogate_estimate_arrays
from doit.score import eval_score

KD = KernelKind("ddim", 1.0)


def test_truncation_level_values():
    assert truncation_level(1) == pytest.approx(np.exp(-1.0))
    # 64^(-1/6) = 0.5 caps above e^(-1), so the cap wins
    assert truncation_level(64) == pytest.approx(np.exp(-1.0))
    assert truncation_level(10**6) == pytest.approx(0.1, rel=1e-12)
    assert truncation_level(123, 0.05) == 0.05
    assert truncation_level(123, "none") == 0.0
    with pytest.raises(ConfigError):
        truncation_level(16, -0.1)
    with pytest.raises(ConfigError):
        truncation_level(16, "half")


def test_doob_config_validation():
    with pytest.raises(ConfigError):
        DoobConfig(m=0)
    with pytest.raises(ConfigError):
        DoobConfig(gamma=-0.5)
    with pytest.raises(ConfigError):
        DoobConfig(l_star=0)
    with pytest.raises(ConfigError):
        DoobConfig(eta_rule="sometimes")
    with pytest.raises(ConfigError):
        DoobConfig(estimator="antithetic")
    with pytest.raises(ConfigError):
        DoobConfig(jacobian="autodiff")


def _setup(T=1.0, L=10, mean=0.0, var=1.0, tau=1.0, r_max=8.0):
    model = gaussian_model(mean, var)
    sch = make_schedule(T=T, L=L)
    rspec = linear_reward([1.0], r_max=r_max)
    hspec = HSpec("exp_tilt", tau=tau)
    return model, sch, rspec, hspec


def test_single_lookahead_without_truncation_returns_raw_gradient():
    """With M = 1 and no truncation floor, grad log h_hat is exactly the
    first-transition gradient g of the single lookahead: the shifted weight
    is 1 and h_hat is 1, so nothing is averaged or floored."""
    model, sch, rspec, hspec = _setup()
    cfg = DoobConfig(m=1, eta_rule="none", jacobian="exact")
    l, seed = 5, 42
    est = estimate_surrogate(np.array([0.3]), l, model, sch, KD, hspec, rspec, cfg, seed)

    from doit.kernels import transition_coeffs

    lin, sc, sigma = transition_coeffs(sch, l, KD)
    z = streams.stream(seed, streams.LOOKAHEAD, l).standard_normal((1, 1, 1))
    jac = eval_score(model, np.array([[0.3]]), sch.t[l], with_jacobian=True).jacobian
    g = (lin / sigma) * z + (sc / sigma) * jac[0, 0, 0] * z
    assert est.h_hat == 1.0
    assert not est.truncation_active
    np.testing.assert_array_equal(est.grad_log_h_hat, g[0, 0])
    np.testing.assert_array_equal(est.grad_h_hat, g[0, 0])


def test_estimate_invariant_to_declared_bound_bitwise():
    model, sch, rspec, hspec = _setup()
    loose = linear_reward([1.0], r_max=1000.0)
    cfg = DoobConfig(m=32, jacobian="exact")
    a = estimate_surrogate(np.array([0.5]), 4, model, sch, KD, hspec, rspec, cfg, 7)
    b = estimate_surrogate(np.array([0.5]), 4, model, sch, KD, hspec, loose, cfg, 7)
    assert a.h_hat == b.h_hat
    assert a.grad_log_h_hat.tobytes() == b.grad_log_h_hat.tobytes()
    assert a.grad_h_hat.tobytes() == b.grad_h_hat.tobytes()
    assert a.truncation_active == b.truncation_active
    # only the absolute scale moves, by exactly the bound difference / tau
    assert b.log_scale - a.log_scale == pytest.approx((8.0 - 1000.0) / 1.0)


def test_unreachable_indicator_event_truncates_to_zero():
    model, sch, _, _ = _setup()
    rspec = threshold_reward([1.0], r0=0.0)
    hspec = HSpec("indicator", r0=1e6)  # no terminal sample can reach this
    cfg = DoobConfig(m=16)
    est = estimate_surrogate(np.array([0.1]), 3, model, sch, KD, hspec, rspec, cfg, 11)
    assert est.h_hat == 0.0
    assert est.truncation_active
    np.testing.assert_array_equal(est.grad_log_h_hat, np.zeros(1))
    np.testing.assert_array_equal(est.grad_h_hat, np.zeros(1))


def test_surrogate_approaches_oracle_gradient_at_small_times():
    """With a large lookahead budget and small step times, the surrogate
    estimate lands within 0.05 of the closed-form grad log h."""
    model, sch, rspec, hspec = _setup(T=0.2, L=10)
    cfg = DoobConfig(m=100_000, jacobian="exact", eta_rule="auto")
    l = 2
    x = np.array([0.4])
    est = estimate_surrogate(x, l, model, sch, KD, hspec, rspec, cfg, 3)
    law = backward_affine_law(model, sch, KD, l)
    exact = exact_grad_log_h(law, hspec, rspec, x)
    assert not est.truncation_active
    assert abs(est.grad_log_h_hat[0] - exact[0]) < 0.05


def test_rollout_and_surrogate_agree_when_one_step_remains():
    """At l = 2 with a tiny t_1, the rollout's one extra transition barely
    moves the lookahead, so paired estimates (shared child noise via
    identical stream keys) give nearly identical h_hat."""
    model, sch, rspec, hspec = _setup(T=0.25, L=10)
    cfg = DoobConfig(m=64, jacobian="exact")
    l = 2
    rng_a = streams.stream(5, streams.LOOKAHEAD, l)
    rng_b = streams.stream(5, streams.LOOKAHEAD, l)
    x = np.linspace(-1.5, 1.5, 200)[:, None]
    score = eval_score(model, x, sch.t[l], with_jacobian=True)
    sur = surrogate_estimate_arrays(x, l, score, sch, KD, hspec, rspec, cfg, rng_a)
    rol = rollout_estimate_arrays(x, l, score, model, sch, KD, hspec, rspec, cfg, rng_b)
    assert np.max(np.abs(sur["h_hat"] - rol["h_hat"])) < 0.02
    assert np.max(np.abs(sur["grad_log_h_hat"] - rol["grad_log_h_hat"])) < 0.2


def test_constant_reward_gradient_shrinks_with_budget():
    """A constant reward has grad log h = 0; the estimator's noise around
    zero must shrink as the lookahead budget grows."""
    model, sch, _, hspec = _setup()
    rspec = linear_reward([0.0], r_max=0.0)
    norms = {}
    for m in (64, 4096):
        cfg = DoobConfig(m=m, eta_rule="none", jacobian="exact")
        vals = [
            abs(
                estimate_surrogate(
                    np.array([0.2]), 6, model, sch, KD, hspec, rspec, cfg, seed
                ).grad_log_h_hat[0]
            )
            for seed in range(40)
        ]
        norms[m] = float(np.median(vals))
    assert norms[4096] < norms[64]


def test_rollout_mean_gradient_matches_oracle():
    """Light unbiasedness check: the absolute grad h estimate (shifted
    gradient rescaled by exp(log_scale)) averaged over repeats matches the
    closed form h * grad log h within 4 standard errors."""
    model, sch, rspec, hspec = _setup(T=1.2, L=6)
    cfg = DoobConfig(m=8, jacobian="exact", eta_rule="auto")
    l, x = 4, np.array([[0.7]])
    repeats = 800
    xall = np.repeat(x, repeats, axis=0)
    score = eval_score(model, xall, sch.t[l], with_jacobian=True)
    rng = streams.stream(17, streams.LOOKAHEAD, l)
    out = rollout_estimate_arrays(xall, l, score, model, sch, KD, hspec, rspec, cfg, rng)
    absolute = np.exp(out["log_scale"])[:, None] * out["grad_h_hat"]
    law = backward_affine_law(model, sch, KD, l)
    from doit import exact_h

    target = float(exact_h(law, hspec, rspec, x[0])) * float(exact_grad_log_h(law, hspec, rspec, x[0])[0])
    se = float(np.std(absolute[:, 0], ddof=1) / np.sqrt(repeats))
    assert abs(float(np.mean(absolute[:, 0])) - target) < 4 * se


def test_nfe_accounting():
    model, sch, rspec, hspec = _setup()
    cfg = DoobConfig(m=12, jacobian="exact")
    s = estimate_surrogate(np.array([0.0]), 5, model, sch, KD, hspec, rspec, cfg, 1)
    assert s.nfe_added == 0
    r = estimate_rollout(np.array([0.0]), 5, model, sch, KD, hspec, rspec, cfg, 1)
    assert r.nfe_added == 12 * 4


def test_estimator_rejects_final_step_and_deterministic_kernels():
    model, sch, rspec, hspec = _setup()
    cfg = DoobConfig(m=4)
    with pytest.raises(DegenerateTransitionError):
        estimate_surrogate(np.array([0.0]), 1, model, sch, KD, hspec, rspec, cfg, 1)
    flow = KernelKind("ddim", 0.0)
    with pytest.raises(DegenerateTransitionError):
        estimate_surrogate(np.array([0.0]), 5, model, sch, flow, hspec, rspec, cfg, 1)


def test_exact_mode_requires_jacobian_capable_model():
    _, sch, rspec, hspec = _setup()
    ext = external_model(lambda x, t: -x, dim=1)
    cfg = DoobConfig(m=4, jacobian="exact")
    with pytest.raises(UnsupportedOperationError):
        estimate_surrogate(np.array([0.0]), 5, ext, sch, KD, hspec, rspec, cfg, 1)
    # frozen mode works fine
    frozen = DoobConfig(m=4, jacobian="frozen")
    est = estimate_surrogate(np.array([0.0]), 5, ext, sch, KD, hspec, rspec, frozen, 1)
    assert np.isfinite(est.grad_log_h_hat).all()


def test_shared_first_draw_between_flavours():
    """Both estimators consume the same (n, M, d) child noise first, so at
    matching keys their first-transition gradients g coincide; with M = 1
    and no truncation the rollout and surrogate grad log h then differ only
    through the weights."""
    model, sch, rspec, hspec = _setup(T=0.5, L=5)
    cfg = DoobConfig(m=1, eta_rule="none", jacobian="exact")
    l = 3
    a = estimate_surrogate(np.array([0.2]), l, model, sch, KD, hspec, rspec, cfg,
                           streams.stream(9, streams.LOOKAHEAD, l))
    b = estimate_rollout(np.array([0.2]), l, model, sch, KD, hspec, rspec, cfg,
                         streams.stream(9, streams.LOOKAHEAD, l))
    np.testing.assert_array_equal(a.grad_log_h_hat, b.grad_log_h_hat)
