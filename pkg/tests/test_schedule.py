import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doit import (
    ConfigError,
    DegenerateKernelError,
    KernelKind,
    NonMonotoneScheduleError,
    kappa_sigma,
    make_schedule,
)


def test_uniform_grid_hand_values():
    sch = make_schedule(T=np.log(4.0), L=2)
    np.testing.assert_allclose(sch.t, [0.0, np.log(2.0), np.log(4.0)], rtol=1e-15)
    np.testing.assert_allclose(sch.alpha_bar, [1.0, 0.5, 0.25], rtol=1e-15)


def test_terminal_signal_level_long_horizon():
    sch = make_schedule(T=10.0, L=20)
    assert sch.alpha_bar[20] == pytest.approx(4.5400e-5, rel=1e-4)


def test_defaults():
    sch = make_schedule(T=2.0)
    assert sch.L == 20
    assert sch.grid == "uniform"
    assert sch.t[0] == 0.0
    assert sch.t[-1] == 2.0


@pytest.mark.parametrize("bad_T", [0.0, -1.0, np.inf, np.nan])
def test_rejects_bad_horizon(bad_T):
    with pytest.raises(ConfigError):
        make_schedule(T=bad_T, L=5)


@pytest.mark.parametrize("bad_L", [0, -3])
def test_rejects_bad_step_count(bad_L):
    with pytest.raises(ConfigError):
        make_schedule(T=1.0, L=bad_L)


def test_rejects_unknown_grid():
    with pytest.raises(ConfigError):
        make_schedule(T=1.0, L=5, grid="geometric")


@given(
    T=st.floats(0.05, 20.0, allow_nan=False),
    L=st.integers(1, 128),
    grid=st.sampled_from(["uniform", "log_snr"]),
)
@settings(deadline=None, max_examples=80)
def test_grid_shape_and_monotonicity(T, L, grid):
    sch = make_schedule(T=T, L=L, grid=grid)
    assert sch.t.shape == (L + 1,)
    assert sch.alpha_bar.shape == (L + 1,)
    assert sch.t[0] == 0.0
    assert sch.t[-1] == T
    assert np.all(np.diff(sch.t) > 0)
    assert sch.alpha_bar[0] == 1.0
    assert np.all(np.diff(sch.alpha_bar) < 0)
    np.testing.assert_allclose(sch.alpha_bar, np.exp(-sch.t), rtol=1e-15)


@given(T=st.floats(0.1, 10.0, allow_nan=False), L=st.integers(1, 64))
@settings(deadline=None, max_examples=60)
def test_uniform_grid_refinement_is_nested_bitwise(T, L):
    """Doubling L keeps every shared time's signal level bitwise identical."""
    coarse = make_schedule(T=T, L=L)
    fine = make_schedule(T=T, L=2 * L)
    assert np.array_equal(coarse.alpha_bar, fine.alpha_bar[::2])


def test_log_snr_grid_concentrates_near_zero():
    uni = make_schedule(T=10.0, L=10)
    log = make_schedule(T=10.0, L=10, grid="log_snr")
    # more resolution at small times, where snr moves fastest
    assert log.t[1] < uni.t[1]


def test_log_snr_t_min_validation():
    with pytest.raises(ConfigError):
        make_schedule(T=1.0, L=5, grid="log_snr", log_snr_t_min=2.0)
    with pytest.raises(ConfigError):
        make_schedule(T=1.0, L=5, grid="log_snr", log_snr_t_min=0.0)


def test_kappa_sigma_synthetic_values():
    sch = make_schedule(T=3.0, L=1)
    assert kappa_sigma(sch, np.array([1.0])) == pytest.approx(3.0)
    sch2 = make_schedule(T=2.0, L=2)
    # (T / L) * (1 + 1/4)
    assert kappa_sigma(sch2, np.array([1.0, 2.0])) == pytest.approx(1.25)


def test_kappa_sigma_quadruples_when_sigmas_halve():
    sch = make_schedule(T=1.0, L=4)
    sigmas = np.array([0.5, 0.8, 1.1, 1.4])
    assert kappa_sigma(sch, sigmas / 2.0) == pytest.approx(
        4.0 * kappa_sigma(sch, sigmas)
    )


def test_kappa_sigma_rejects_zero_sigma():
    sch = make_schedule(T=1.0, L=2)
    with pytest.raises(DegenerateKernelError):
        kappa_sigma(sch, np.array([0.0, 1.0]))


@pytest.mark.parametrize("kind", [KernelKind("ddim", 1.0), KernelKind("euler_ancestral")])
def test_kappa_sigma_degenerate_for_real_kernels(kind):
    """Both kernels are deterministic at the final step of any full grid
    (the signal level at t_0 = 0 is exactly 1), so the diagnostic has no
    finite value for them."""
    sch = make_schedule(T=np.log(4.0), L=2)
    with pytest.raises(DegenerateKernelError):
        kappa_sigma(sch, kind)


def test_kappa_sigma_shape_mismatch():
    sch = make_schedule(T=1.0, L=3)
    with pytest.raises(ConfigError):
        kappa_sigma(sch, np.array([1.0, 1.0]))


def test_log_snr_collapsed_range_raises():
    """An interior point squeezed against T collapses two grid times."""
    with pytest.raises(NonMonotoneScheduleError):
        make_schedule(T=1.0, L=50, grid="log_snr", log_snr_t_min=np.nextafter(1.0, 0.0))
