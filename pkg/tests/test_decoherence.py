import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import diagonal_state
from oracles import DETUNING, MEAN_PHASES
from prft.counting import CountingGrid, evaluate_table, mgf_function
from prft.decoherence import (DensityMatrix, coherence_integral, coherence_matrix, gaussian_coherence,
                              kraus_operators, observable_expectation, reduced_density_semiclassical)
from prft.errors import SpecificationError
from prft.jaynescummings import JCParams, floquet_superposition
from prft.model import SIGMA_X, SIGMA_Y, SIGMA_Z, DriveMode, DrivenSystem
from prft.propagator import floquet_decompose
from prft.statistics import distribution_fft, gaussian_distribution

PARAMS = JCParams.from_detuning(DETUNING)
ROT = PARAMS.system()
DEC = floquet_decompose(ROT, MEAN_PHASES)
MIXED = floquet_superposition(DEC, (0.93, 0.38))
LOWER = floquet_superposition(DEC, (1.0, 0.0))


@pytest.mark.parametrize("bad", [np.array([[1, 1], [0, 0]]), np.eye(2), np.diag([1.5, -0.5]),
                                 np.ones(3)])
def test_density_matrix_validation(bad):
    with pytest.raises(SpecificationError):
        DensityMatrix(bad)


def test_pure_state_purity_and_expectation():
    rho = DensityMatrix.pure([1, 1j])
    assert rho.purity == pytest.approx(1.0)
    assert observable_expectation(rho, SIGMA_Y) == pytest.approx(1.0)
    with pytest.raises(SpecificationError):
        observable_expectation(rho, np.array([[0, 1], [0, 0]]))


@pytest.fixture(scope="module")
def kraus100():
    return kraus_operators(ROT, diagonal_state(100.0), 100.0, decomposition=DEC)


def test_kraus_completeness_at_t100(kraus100):
    assert kraus100.completeness_defect() <= 1e-8


def test_kraus_probabilities_match_exact_fft(kraus100):
    rho = DensityMatrix.pure(MIXED).entries
    kraus_dist = kraus100.distribution(rho)
    assert kraus_dist.normalization_defect < 1e-9
    assert np.min(kraus_dist.probabilities) >= -1e-9
    grid = CountingGrid((512, 1))
    t = np.array([100.0])
    table = evaluate_table("exact", mgf_function("exact", ROT, diagonal_state(100.0), MIXED, t), grid, t)
    assert distribution_fft(table, 0).total_variation(kraus_dist.marginal(1)) < 1e-5


def test_kraus_channel_preserves_trace(kraus100):
    out = kraus100.apply(DensityMatrix.pure(MIXED).entries)
    assert np.trace(out.entries).real == pytest.approx(1.0, abs=1e-10)
    assert out.purity < 1.0


def test_linearized_kraus_is_complete():
    ks = kraus_operators(ROT, diagonal_state(100.0), 50.0, linearized=True, decomposition=DEC)
    assert ks.completeness_defect() <= 1e-8


def test_kraus_on_periodic_lab_frame_system():
    sys = DrivenSystem(0.5 * SIGMA_Z, (DriveMode(5.0, 0.4, 0.0, SIGMA_X),))
    from prft.model import GaussianPhotonState
    state = GaussianPhotonState.diagonal([16.0], mean_phases=[0.0])
    ks = kraus_operators(sys, state, 3.0)
    assert ks.completeness_defect() <= 1e-8


def test_gaussian_coherence_matches_lattice_summation():
    state = diagonal_state(100.0)
    init = gaussian_distribution(state)
    for a, b in (((3.0, -3.0), (-3.0, 3.0)), ((10.0, 0.0), (0.0, 0.0)), ((7.5, 2.0), (-1.0, 4.0))):
        closed = gaussian_coherence(state.variance, a, b)
        assert coherence_integral(init, a, b) == pytest.approx(closed, abs=2e-3)
    integer = ((4.0, -4.0), (-4.0, 4.0))
    assert coherence_integral(init, *integer) == pytest.approx(
        gaussian_coherence(state.variance, *integer), rel=1e-6)


@given(st.floats(0, 500), st.floats(1, 1e4))
def test_coherence_matrix_properties(t, var):
    c = coherence_matrix(DEC, t, variance=np.diag([var, var]))
    assert np.all(np.diag(c) == 1.0)
    assert np.all(c <= 1.0) and np.all(c >= 0.0)
    assert np.allclose(c, c.T)


def test_reduced_density_at_t0_is_initial_state():
    dec = DEC.with_state(MIXED)
    rho = reduced_density_semiclassical(dec, coherence_matrix(dec, 0.0, variance=np.eye(2)), 0.0)
    direct = np.vdot(MIXED, SIGMA_Y @ MIXED).real
    assert observable_expectation(rho, SIGMA_Y) == pytest.approx(direct, abs=1e-12)


def test_floquet_state_sigma_y_is_constant():
    dec = DEC.with_state(LOWER)
    var = np.diag([100.0, 100.0])
    vals = [observable_expectation(reduced_density_semiclassical(dec, coherence_matrix(dec, t, variance=var),
                                                                 t, ROT), SIGMA_Y)
            for t in np.linspace(0, 200, 41)]
    assert np.ptp(vals) < 1e-6


def test_superposition_coherence_decays():
    dec = DEC.with_state(MIXED)
    var = np.diag([100.0, 100.0])
    rho = [reduced_density_semiclassical(dec, coherence_matrix(dec, t, variance=var), t) for t in (0, 200)]
    assert rho[1].purity < rho[0].purity - 0.1
