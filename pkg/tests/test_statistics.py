import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import diagonal_state
from oracles import DETUNING, GRADIENT, KAPPA_1234, MEAN_PHASES, MOMENTS_1234
from prft.counting import CountingGrid, MGFTable, Variant, evaluate_table, mgf_function
from prft.errors import AliasingError, SpecificationError
from prft.jaynescummings import JCParams, floquet_superposition
from prft.model import GaussianPhotonState
from prft.propagator import floquet_decompose
from prft.statistics import (PhotonDistribution, cumulants_fd, cumulants_from_moments, distribution_fft,
                             error_scaling_fit, fd_weights, gaussian_distribution, initial_cumulants,
                             leading_coefficient_fit, local_maxima, moments_from_cumulants,
                             power_law_fit, semiclassical_distribution, unwrapped_log)

PARAMS = JCParams.from_detuning(DETUNING)
ROT = PARAMS.system()
DEC = floquet_decompose(ROT, MEAN_PHASES)
MIXED = floquet_superposition(DEC, (0.93, 0.38))


def cumulant_mgf(kappa, n_modes=1, k=1):
    """``M(chi) = exp(sum_l kappa_l (-i chi_k)^l / l!)`` for one active mode."""
    def fn(chi):
        c = np.asarray(chi)[..., k - 1]
        log = sum(kap * (-1j * c) ** (l + 1) / math.factorial(l + 1) for l, kap in enumerate(kappa))
        return np.exp(log)[..., None]
    return fn


def test_fd_weights_reproduce_polynomial_derivatives():
    s = np.arange(-3, 4)
    for order in range(1, 5):
        w = fd_weights(s, order)
        for p in range(7):
            want = math.factorial(p) if p == order else 0.0
            assert np.dot(w, s.astype(float) ** p) == pytest.approx(want, abs=1e-9)


def test_moment_oracle_values():
    assert np.allclose(moments_from_cumulants(np.array(KAPPA_1234)), MOMENTS_1234, atol=1e-12)
    assert np.allclose(cumulants_from_moments(np.array(MOMENTS_1234)), KAPPA_1234, atol=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_cumulant_moment_round_trip(kappa):
    k = np.array(kappa)
    back = cumulants_from_moments(moments_from_cumulants(k))
    assert np.max(np.abs(back - k)) <= 1e-12 * max(1.0, np.max(np.abs(k)) ** 4)


@given(st.floats(-50, 50), st.floats(0.1, 30), st.floats(-5, 5), st.floats(-5, 5))
def test_cumulants_fd_recovers_known_cumulants(k1, k2, k3, k4):
    kappa = (k1, k2, k3, k4)
    series = cumulants_fd(cumulant_mgf(kappa), 1, 1, [0.0], max_order=4, h=0.1)
    got = series.values[:, 0]
    # log M is a quartic, so the stencil is exact up to roundoff ~ eps |log M| / h^4
    scale = max(abs(k1), np.sqrt(k2), 1.0)
    assert np.allclose(got, kappa, rtol=1e-6, atol=1e-7 * scale ** 4)


def test_unwrapped_log_is_continuous_through_branch_cut():
    x = np.linspace(-1, 1, 101)
    vals = np.exp(1j * 50 * x)
    log = unwrapped_log(vals, 50)
    assert np.allclose(log.imag, 50 * x)


def test_cumulants_fd_validation():
    with pytest.raises(SpecificationError):
        cumulants_fd(cumulant_mgf((1.0,)), 1, 1, [0.0], h=1.0)
    with pytest.raises(SpecificationError):
        cumulants_fd(cumulant_mgf((1.0,)), 2, 1, [0.0])


def test_initial_cumulants_and_total_series():
    state = GaussianPhotonState.diagonal([100.0, 50.0], mean_photons=[1000.0, 7.0])
    assert np.allclose(initial_cumulants(state, 1), [1000.0, 100.0, 0.0, 0.0])
    series = cumulants_fd(cumulant_mgf((2.0, 3.0), n_modes=2), 1, 2, [0.0], initial=state)
    assert np.allclose(series.values[:2, 0], [1002.0, 103.0], atol=1e-6)


def test_initial_variant_inverts_to_gaussian_amplitudes():
    state = diagonal_state(100.0)
    grid = CountingGrid((256, 1))
    t = np.array([0.0])
    table = evaluate_table("initial", mgf_function("initial", ROT, state, MIXED, t), grid, t)
    d = distribution_fft(table, 0)
    n = d.offsets[0]
    want = np.abs(state.amplitudes(np.stack([n, np.zeros_like(n)], -1))) ** 2
    want = want / want.sum()
    assert np.max(np.abs(d.probabilities - want)) < 1e-8


def test_aliasing_is_detected():
    state = diagonal_state(100.0)
    grid = CountingGrid((64, 1))
    t = np.array([0.0])
    table = evaluate_table("initial", mgf_function("initial", ROT, state, MIXED, t), grid, t)
    with pytest.raises(AliasingError):
        distribution_fft(table, 0)


def test_semiclassical_shift_matches_fft_of_semiclassical_mgf():
    state = diagonal_state(100.0)
    t = 20.0 / GRADIENT  # integer drifts of +-20 sites
    dec = DEC.with_state(MIXED)
    shifted = semiclassical_distribution(dec, gaussian_distribution(state), t)
    grid = CountingGrid((512, 512))
    fn = mgf_function("semiclassical", ROT, state, MIXED, [t])
    init = mgf_function("initial", ROT, state, MIXED, [t])
    table = evaluate_table("semiclassical", lambda c: fn(c) * init(c), grid, [t])
    assert distribution_fft(table, 0).total_variation(shifted) < 1e-6


def test_distribution_moments_and_alignment():
    p = PhotonDistribution((np.array([-1, 0, 1]),), np.array([0.25, 0.5, 0.25]), np.array([10.0]))
    assert np.allclose(p.moments(1, 2), [10.0, 100.5])
    assert np.allclose(p.cumulants(1, 4), [10.0, 0.5, 0.0, -0.25])
    q = PhotonDistribution((np.array([0, 1, 2]),), np.array([0.25, 0.5, 0.25]), np.array([9.0]))
    assert p.total_variation(q) == pytest.approx(0.0, abs=1e-15)


def test_local_maxima_and_power_law():
    p = np.array([0, 1, 3, 1, 0, 2, 5, 2, 0])
    assert list(local_maxima(p)) == [2, 6]
    x = np.array([1.0, 2.0, 4.0, 8.0])
    a, pre, res = power_law_fit(x, 3 * x ** -2)
    assert a == pytest.approx(-2) and pre == pytest.approx(3) and res < 1e-12


def test_leading_coefficient_fit_ignores_oscillations():
    t = np.linspace(1, 200, 800)
    y = 0.02 * t ** 3 + 0.1 * t ** 2 * np.cos(1.4 * t) + 3 * t ** 2
    a, b = leading_coefficient_fit(t, y, 3)
    assert a == pytest.approx(0.02, rel=5e-3)


def test_error_scaling_fit_requires_two_decades():
    with pytest.raises(SpecificationError):
        error_scaling_fit(ROT, MEAN_PHASES, MIXED, [100.0, 200.0, 400.0], [10.0, 20.0])


def test_error_scaling_small_run():
    t = np.linspace(5, 40, 8)
    rep = error_scaling_fit(ROT, MEAN_PHASES, floquet_superposition(DEC, (1, 0)), [1e2, 1e3, 1e4], t,
                            max_order=2)
    assert rep.errors.shape == (3, 2, 8)
    # the mean-count error decreases with variance
    assert rep.sigma_exponents[0] < -0.5
