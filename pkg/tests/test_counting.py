import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import diagonal_state
from oracles import DETUNING, GRADIENT, MEAN_PHASES, WEIGHT_1, WEIGHT_2
from prft.counting import (CountingGrid, Variant, evaluate_table, gauss_hermite_nodes, integrated_flux,
                           mgf_aprft, mgf_exact_gaussian, mgf_function, mgf_initial, mgf_pfo, mgf_prft,
                           mgf_semiclassical_floquet)
from prft.errors import QuadratureError, SpecificationError
from prft.jaynescummings import JCParams, floquet_superposition, jc_mgf_analytic
from prft.model import GaussianPhotonState
from prft.propagator import floquet_decompose
from prft.statistics import cumulants_fd

PARAMS = JCParams.from_detuning(DETUNING)
ROT = PARAMS.system()
DEC = floquet_decompose(ROT, MEAN_PHASES)
MIXED = floquet_superposition(DEC, (0.93, 0.38))
LOWER = floquet_superposition(DEC, (1.0, 0.0))


def test_counting_grid_layout():
    g = CountingGrid((8, 1))
    pts = g.points()
    assert pts.shape == (8, 2)
    assert np.all(pts[0] == 0) and np.all(pts[:, 1] == 0)
    assert np.allclose(np.sort(pts[:, 0]), 2 * np.pi * np.arange(-4, 4) / 8)
    with pytest.raises(SpecificationError):
        CountingGrid((6, 4))


def test_initial_mgf_matches_lattice_sum():
    state = GaussianPhotonState.diagonal([25.0], mean_phases=[0.3])
    n = np.arange(-50, 51)
    p = np.abs(state.amplitudes(n[:, None])) ** 2
    chi = np.linspace(-np.pi, np.pi, 37)
    direct = np.exp(-1j * np.outer(chi, n)) @ p
    assert np.max(np.abs(mgf_initial(state, chi[:, None]) - direct)) < 1e-8


def test_prft_matches_closed_form_and_shape():
    chi = np.random.default_rng(1).uniform(-np.pi, np.pi, size=(4, 5, 2))
    t = np.array([0.0, 7.0, 60.0])
    m = mgf_prft(ROT, MEAN_PHASES, MIXED, chi, t)
    assert m.shape == (4, 5, 3)
    assert np.max(np.abs(m - jc_mgf_analytic(PARAMS, MIXED, chi, t))) < 1e-10


def test_floquet_state_mean_drift_equals_gradient():
    t = np.array([5.0, 50.0])
    fn = lambda c: mgf_prft(ROT, MEAN_PHASES, LOWER, c, t)
    k1 = cumulants_fd(fn, 1, 2, t, max_order=1).values[0]
    assert np.allclose(k1, -GRADIENT * t, rtol=1e-6)


def test_semiclassical_two_branch_interference():
    t = 120.0
    chi1 = np.pi / (t * GRADIENT * 2)
    m = mgf_semiclassical_floquet(DEC.with_state(MIXED), np.array([[chi1, 0.0]]), t)[0]
    theta = t * GRADIENT * chi1
    want = WEIGHT_1 * np.exp(1j * theta) + WEIGHT_2 * np.exp(-1j * theta)
    assert abs(m - want) < 1e-9
    assert abs(abs(m) - (WEIGHT_1 - WEIGHT_2)) < 1e-9


def test_exact_converges_to_prft_times_initial():
    state = diagonal_state(1e6)
    chi = np.array([[0.0, 0.0], [1e-3, -2e-3], [2e-3, 1e-3]])
    t = np.array([10.0, 50.0])
    exact = mgf_exact_gaussian(ROT, state, MIXED, chi, t)
    approx = mgf_prft(ROT, MEAN_PHASES, MIXED, chi, t) * mgf_initial(state, chi)[:, None]
    assert np.max(np.abs(exact - approx)) < 1e-6


def test_exact_normalization_and_order_report():
    state = diagonal_state(100.0)
    m, order = mgf_exact_gaussian(ROT, state, MIXED, np.zeros((1, 2)), [30.0], return_order=True)
    assert abs(m[0, 0] - 1) < 1e-10 and order >= 20


def test_quadrature_failure_raises():
    params = JCParams.from_detuning(DETUNING, amplitudes=(1.0,), phases=(0.0,))
    sys = params.system()
    state = GaussianPhotonState.diagonal([4.0], mean_phases=[0.0])
    with pytest.raises(QuadratureError):
        mgf_exact_gaussian(sys, state, [1, 0], np.array([[0.3]]), [500.0], tol=1e-300)


def test_gauss_hermite_weights_normalized_and_moments():
    state = diagonal_state(50.0)
    nodes, w = gauss_hermite_nodes(state, 30)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    d = nodes - state.mean_phases
    # weight exp(-2 sigma^2 dphi^2) has variance 1/(4 sigma^2)
    assert np.allclose(w @ d ** 2, 1 / (4 * 50.0), rtol=1e-10)


def test_pfo_and_aprft_match_prft_to_second_order():
    t = np.linspace(10, 200, 5)
    series = {}
    for name, fn in (("prft", lambda c: mgf_prft(ROT, MEAN_PHASES, MIXED, c, t)),
                     ("pfo", lambda c: mgf_pfo(ROT, MEAN_PHASES, MIXED, c, t)),
                     ("aprft", lambda c: mgf_aprft(ROT, MEAN_PHASES, MIXED, c, t))):
        series[name] = cumulants_fd(fn, 1, 2, t, max_order=2).values
    for name in ("pfo", "aprft"):
        assert np.max(np.abs(series[name] - series["prft"])) < 1e-6


def test_integrated_flux_static_matches_quadrature():
    t = np.array([3.0])
    j = integrated_flux(ROT, MEAN_PHASES, t)
    from prft.propagator import effective_flux, propagate
    s = np.linspace(0, 3.0, 6001)
    u = propagate(ROT, MEAN_PHASES, s)
    jj = effective_flux(ROT, MEAN_PHASES, s, 1)
    heis = np.conj(np.swapaxes(u, -1, -2)) @ jj @ u
    direct = np.trapezoid(heis, s, axis=0)
    assert np.max(np.abs(j[0, 0] - direct)) < 1e-6


def test_dispatch_and_table():
    t = np.array([0.0, 20.0])
    state = diagonal_state(100.0)
    grid = CountingGrid((16, 4))
    for v in Variant:
        fn = mgf_function(v, ROT, state, MIXED, t)
        table = evaluate_table(v, fn, grid, t)
        assert table.values.shape == (2, 64)
        assert table.normalization_defect() < 1e-10
    tot = evaluate_table("total", mgf_function("total", ROT, state, MIXED, t), grid, t)
    pr = evaluate_table("prft", mgf_function("prft", ROT, state, MIXED, t), grid, t)
    assert np.allclose(tot.values, pr.values * mgf_initial(state, grid.points())[None])
    with pytest.raises(SpecificationError):
        mgf_function("exact", ROT, None, MIXED, t)


@given(st.floats(0, 300), st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_mgf_zero_is_one(t, a, b):
    psi = np.array([np.cos(a), np.exp(1j * b) * np.sin(a)])
    zero = np.zeros((1, 2))
    for fn in (mgf_prft, mgf_aprft, mgf_pfo):
        assert abs(fn(ROT, MEAN_PHASES, psi, zero, [t])[0, 0] - 1) < 1e-10


@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi), st.floats(0, 300))
def test_prft_conjugation_symmetry(c1, c2, t):
    chi = np.array([[c1, c2]])
    m = mgf_prft(ROT, MEAN_PHASES, MIXED, chi, [t])
    assert abs(mgf_prft(ROT, MEAN_PHASES, MIXED, -chi, [t]) - np.conj(m)).max() < 1e-12
    assert np.abs(m).max() <= 1 + 1e-12
