"""Brute-force quantized references.

``sambe_evolve`` propagates the photon-number lattice with number-independent
hopping (photon operators replaced by ``alpha`` times shift operators), which
is exact for the semiclassical drive. ``fock_jc_evolve`` solves the genuine
two-mode Jaynes-Cummings model with ``sqrt(n)`` matrix elements. Both use
sparse Krylov exponentials (``scipy.sparse.linalg.expm_multiply``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .errors import LatticeError, SpecificationError
from .model import SIGMA_MINUS, SIGMA_PLUS, SIGMA_Z, DrivenSystem, GaussianPhotonState, as_state
from .statistics import PhotonDistribution, cumulants_from_moments

BOUNDARY_TOL = 1e-8
NORM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LatticeState:
    """Amplitudes ``psi[n_1, ..., n_N, i]`` on a photon lattice at one time.

    ``offsets[k]`` lists the photon numbers of axis ``k`` relative to
    ``reference``; the matter index is last. Matter states are in the
    system frame.
    """

    offsets: tuple
    amplitudes: np.ndarray
    reference: np.ndarray
    time: float

    @property
    def n_modes(self) -> int:
        return self.amplitudes.ndim - 1

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def probabilities(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-1)

    def boundary_mass(self, shells: int = 2) -> float:
        p = self.probabilities()
        inner = p[tuple(slice(shells, -shells) for _ in range(self.n_modes))]
        return float(p.sum() - inner.sum())

    def photon_distribution(self) -> PhotonDistribution:
        p = self.probabilities()
        return PhotonDistribution(tuple(self.offsets), p / p.sum(), np.asarray(self.reference, float),
                                  self.time, abs(float(p.sum()) - 1))

    def reduced_density(self) -> np.ndarray:
        psi = self.amplitudes.reshape(-1, self.amplitudes.shape[-1])
        return psi.T @ np.conj(psi)

    def mgf(self, chi) -> np.ndarray:
        """``sum_n exp(-i chi . n) p_n`` with absolute photon numbers."""
        chi = np.asarray(chi, dtype=float)
        p = self.probabilities()
        out = p.astype(complex)
        # contract one axis at a time: phases factorize over modes
        flat = chi.reshape(-1, self.n_modes)
        vals = np.empty(flat.shape[0], dtype=complex)
        for i, c in enumerate(flat):
            acc = out
            for k in range(self.n_modes):
                n = self.offsets[k] + self.reference[k]
                acc = np.tensordot(np.exp(-1j * c[k] * n), acc, axes=([0], [0]))
            vals[i] = acc
        return vals.reshape(chi.shape[:-1])


SambeLatticeState = LatticeState
FockJCState = LatticeState


def _shift_down(size: int):
    """Lowering shift ``|m> -> |m-1>`` on ``size`` sites (no wrap-around)."""
    return sp.diags(np.ones(size - 1), 1, shape=(size, size), format="csr")


def _kron_all(ops):
    out = ops[0]
    for op in ops[1:]:
        out = sp.kron(out, op, format="csr")
    return out


def _check_frame(sys: DrivenSystem):
    """The frame must absorb the photon energy: ``[G, V_k] = omega_k V_k`` and ``[G, H_M] = 0``."""
    g = sys.frame
    if np.max(np.abs(g @ sys.matter_hamiltonian - sys.matter_hamiltonian @ g)) > 1e-10:
        raise SpecificationError("frame generator does not commute with the matter Hamiltonian")
    for m in sys.modes:
        if np.max(np.abs(g @ m.coupling - m.coupling @ g - m.frequency * m.coupling)) > 1e-10:
            raise SpecificationError("frame generator does not absorb the drive frequency")


def sambe_hamiltonian(sys: DrivenSystem, half_widths) -> sp.csr_matrix:
    """Lattice Hamiltonian on offsets ``[-N_k, N_k]``.

    With a frame, the conserved ``G + sum_k omega_k n_k`` is removed, leaving
    ``H_M - G`` plus hopping; otherwise ``sum_k omega_k n_k`` is kept.
    """
    sizes = [2 * int(n) + 1 for n in half_widths]
    eye = [sp.identity(s, format="csr") for s in sizes]
    d = sys.dim
    matter = sys.matter_hamiltonian - (sys.frame if sys.frame is not None else 0)
    h = _kron_all(eye + [sp.csr_matrix(matter)])
    if sys.frame is None:
        for k, m in enumerate(sys.modes):
            num = sp.diags(np.arange(-half_widths[k], half_widths[k] + 1).astype(float))
            ops = list(eye)
            ops[k] = num
            h = h + m.frequency * _kron_all(ops + [sp.identity(d)])
    else:
        _check_frame(sys)
    for k, m in enumerate(sys.modes):
        ops = list(eye)
        ops[k] = _shift_down(sizes[k])
        hop = 0.5 * m.amplitude * _kron_all(ops + [sp.csr_matrix(m.coupling)])
        h = h + hop + hop.conj().T
    return h.tocsr()


def sambe_window(sys: DrivenSystem, state: GaussianPhotonState, t_max: float) -> list:
    """Default half-widths ``ceil(12 sigma_k + 1.5 t max|grad E|)``."""
    from .propagator import floquet_decompose

    grad = floquet_decompose(sys, state.mean_phases).gradients
    drift = 0.0 if grad is None else float(np.max(np.abs(grad)))
    return [int(math.ceil(12 * s + 1.5 * t_max * drift)) for s in state.sigmas]


def _evolve_times(h, v0, times):
    """``exp(-i h t) v0`` at increasing ``times``, shape (T, len(v0))."""
    out = np.empty((len(times), v0.shape[0]), dtype=complex)
    v, t_prev = v0.astype(complex), 0.0
    a = (-1j * h).tocsc()
    for i, t in enumerate(times):
        if t < t_prev:
            raise SpecificationError("times must be non-decreasing")
        if t > t_prev:
            v = expm_multiply(a * (t - t_prev), v)
        out[i] = v
        t_prev = t
    return out


def _validate(states, boundary_tol):
    for st in states:
        if abs(st.norm - 1) > NORM_TOL:
            raise LatticeError(f"norm drift {abs(st.norm - 1):.3e} at t={st.time}")
        mass = st.boundary_mass()
        if mass > boundary_tol:
            raise LatticeError(f"boundary mass {mass:.3e} at t={st.time}: enlarge the window")


def sambe_evolve(sys: DrivenSystem, state: GaussianPhotonState, matter_state, times,
                 half_widths=None, boundary_tol: float = BOUNDARY_TOL) -> list:
    """Evolve ``a_n (x) psi`` on the Sambe lattice; one :class:`LatticeState` per time."""
    if state.n_modes != sys.n_modes:
        raise SpecificationError("photon state and system have different mode counts")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    psi = as_state(matter_state, sys.dim)
    hw = sambe_window(sys, state, times.max()) if half_widths is None else [int(n) for n in half_widths]
    ref = np.rint(state.mean_photons)
    offsets = tuple(np.arange(-n, n + 1) for n in hw)
    mesh = np.meshgrid(*offsets, indexing="ij")
    n_abs = np.stack([m + r for m, r in zip(mesh, ref)], axis=-1)
    amp = state.amplitudes(n_abs)
    amp = amp / np.sqrt(np.sum(np.abs(amp) ** 2))
    v0 = (amp[..., None] * psi).reshape(-1)
    h = sambe_hamiltonian(sys, hw)
    shape = tuple(len(o) for o in offsets) + (sys.dim,)
    vs = _evolve_times(h, v0, times)
    out = [LatticeState(offsets, v.reshape(shape), ref, float(t)) for v, t in zip(vs, times)]
    _validate(out, boundary_tol)
    return out


def sambe_propagator(sys: DrivenSystem, phi, t: float, half_width: int = 40,
                     boundary_tol: float = BOUNDARY_TOL) -> np.ndarray:
    """Semiclassical propagators rebuilt from lattice columns.

    Each matter basis state starts at offset 0; the evolved amplitudes
    ``psi_m`` give ``U_phi = sum_m psi_m exp(-i m . phi)`` (interaction
    picture, or system frame when one is set). Returns ``phi.shape[:-1] + (d, d)``.
    """
    phi = sys.check_phases(phi)
    hw = [int(half_width)] * sys.n_modes
    h = sambe_hamiltonian(sys, hw)
    offsets = [np.arange(-n, n + 1) for n in hw]
    shape = tuple(len(o) for o in offsets) + (sys.dim,)
    center = tuple(n for n in hw)
    cols = []
    for j in range(sys.dim):
        v0 = np.zeros(shape, dtype=complex)
        v0[center + (j,)] = 1.0
        v = _evolve_times(h, v0.reshape(-1), [t])[0].reshape(shape)
        st = LatticeState(tuple(offsets), v, np.zeros(sys.n_modes), t)
        _validate([st], boundary_tol)
        if sys.frame is None:
            mesh = np.meshgrid(*offsets, indexing="ij")
            v = v * np.exp(1j * t * sum(w * m for w, m in zip(sys.frequencies, mesh)))[..., None]
        cols.append(v)
    flat = phi.reshape(-1, sys.n_modes)
    out = np.empty((flat.shape[0], sys.dim, sys.dim), dtype=complex)
    for b, ph in enumerate(flat):
        for j, v in enumerate(cols):
            acc = v
            for k in range(sys.n_modes):
                acc = np.tensordot(np.exp(-1j * offsets[k] * ph[k]), acc, axes=([0], [0]))
            out[b, :, j] = acc
    return out.reshape(phi.shape[:-1] + (sys.dim, sys.dim))


def _fock_jc_setup(params, mean_photons, times, n_max=None):
    """Coherent input amplitudes, sparse Hamiltonian and Fock cutoff."""
    nbar = np.atleast_1d(np.asarray(mean_photons, dtype=float))
    if nbar.shape != (params.n_modes,) or np.any(nbar <= 0):
        raise SpecificationError("mean photon numbers must be positive, one per mode")
    alpha = np.sqrt(nbar)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    g = np.asarray(params.amplitudes) / (2 * alpha)
    if n_max is None:
        n_max = int(math.ceil(nbar.max() + 8 * alpha.max() + times.max() * max(params.amplitudes) + 10))
    if np.any(nbar + 6 * alpha >= n_max):
        raise SpecificationError(f"n_max={n_max} too small for mean photon numbers {nbar}")
    size = n_max + 1
    eye = sp.identity(size, format="csr")
    lower = sp.diags(np.sqrt(np.arange(1, size)), 1, shape=(size, size), format="csr")
    ops_sp, ops_sm = sp.csr_matrix(SIGMA_PLUS), sp.csr_matrix(SIGMA_MINUS)
    n_modes = params.n_modes
    h = 0.5 * params.detuning * _kron_all([eye] * n_modes + [sp.csr_matrix(SIGMA_Z)])
    for k in range(n_modes):
        ops = [eye] * n_modes
        ops[k] = lower
        hop = g[k] * _kron_all(ops + [ops_sp])
        h = h + hop + hop.conj().T
    n = np.arange(size)
    factors = []
    for k in range(n_modes):
        logp = -0.5 * nbar[k] + n * np.log(alpha[k]) - 0.5 * np.array([math.lgamma(x + 1) for x in n])
        factors.append(np.exp(logp + 1j * n * params.phases[k]))
    amp = factors[0]
    for f in factors[1:]:
        amp = np.multiply.outer(amp, f)
    return amp, h, size


def fock_jc_evolve(params, mean_photons, matter_state, times, n_max=None,
                   boundary_tol: float = BOUNDARY_TOL) -> list:
    """Two-mode Jaynes-Cummings model with true Fock states, rotating frame.

    Couplings ``g_k = Omega_k / (2 alpha_k)`` with ``alpha_k^2`` the mean
    photon numbers; the coherent inputs carry the preset mean phases. The
    Hamiltonian after removing ``omega (n_1 + n_2 + sigma_z / 2)`` is
    ``(Delta/2) sigma_z + sum_k g_k (sigma_+ a_k + sigma_- a_k^dag)``.
    Returns one :class:`LatticeState` per time with absolute photon numbers
    as offsets (reference 0).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    amp, h, size = _fock_jc_setup(params, mean_photons, times, n_max)
    psi = as_state(matter_state, 2)
    amp = amp / np.sqrt(np.sum(np.abs(amp) ** 2))
    v0 = (amp[..., None] * psi).reshape(-1)
    shape = amp.shape + (2,)
    offsets = tuple(np.arange(size) for _ in range(amp.ndim))
    vs = _evolve_times(h.tocsr(), v0, times)
    out = [LatticeState(offsets, v.reshape(shape), np.zeros(amp.ndim), float(t)) for v, t in zip(vs, times)]
    for st in out:
        if abs(st.norm - 1) > NORM_TOL:
            raise LatticeError(f"norm drift {abs(st.norm - 1):.3e} at t={st.time}")
        p = st.probabilities()
        top = sum(float(np.take(p, [-1, -2], axis=k).sum()) for k in range(amp.ndim))
        if top > boundary_tol:
            raise LatticeError(f"top Fock shells hold {top:.3e}: increase n_max")
    return out


def lattice_statistics(state: LatticeState, k: int = 1, max_order: int = 4):
    """Photon distribution, cumulants of mode ``k`` from direct sums, reduced matter density."""
    dist = state.photon_distribution()
    marg = dist.marginal(k)
    n = marg.offsets[0].astype(float)
    mean_off = float(np.sum(marg.probabilities * n))
    central = np.array([np.sum(marg.probabilities * (n - mean_off) ** l) for l in range(1, max_order + 1)])
    central[0] = 0.0
    kappa = cumulants_from_moments(central)
    kappa[0] = mean_off + marg.reference[0]
    from .decoherence import DensityMatrix

    return dist, kappa, DensityMatrix(state.reduced_density())
