"""Semiclassical propagators, Floquet decomposition and quasienergy gradients.

All functions are batched over phase vectors: ``phi`` of shape ``(..., N_D)``
returns arrays with the same leading axes. When the system carries a frame
generator every matrix below lives in that frame.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegeneracyError, IntegrationError, SpecificationError
from .model import (DrivenSystem, as_state, build_semiclassical_hamiltonian,
                    photon_flux_operator)

UNITARITY_TOL = 1e-9
DEGENERACY_TOL = 1e-10
POINTS_PER_PERIOD = 256

# Gauss nodes and weights of the 4th-order commutator-free Magnus scheme
_C1 = 0.5 - math.sqrt(3) / 6
_C2 = 0.5 + math.sqrt(3) / 6
_A1 = 0.25 + math.sqrt(3) / 6
_A2 = 0.25 - math.sqrt(3) / 6


def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def expm_hermitian(h, scale=-1j):
    """``exp(scale * h)`` for (batched) Hermitian ``h``."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(scale * w)[..., None, :]) @ dagger(v)


def unitarity_defect(u) -> float:
    u = np.asarray(u)
    eye = np.eye(u.shape[-1])
    return float(np.max(np.abs(dagger(u) @ u - eye))) if u.size else 0.0


def frame_unitary(sys: DrivenSystem, t):
    """``exp(+i G t)`` mapping lab-frame states into the system frame."""
    t = np.asarray(t, dtype=float)
    if sys.frame is None:
        return np.broadcast_to(np.eye(sys.dim, dtype=complex), t.shape + (sys.dim, sys.dim))
    return expm_hermitian(np.multiply.outer(t, sys.frame), scale=1j)


def effective_hamiltonian(sys: DrivenSystem, phi, t):
    """Semiclassical Hamiltonian in the system frame: ``W (H - G) W^dag``."""
    h = build_semiclassical_hamiltonian(sys, phi, t)
    if sys.frame is None:
        return h
    w = frame_unitary(sys, t)
    return w @ (h - sys.frame) @ dagger(w)


def effective_flux(sys: DrivenSystem, phi, t, k: int):
    """Photon-flux operator of mode ``k`` (1-based) in the system frame."""
    j = photon_flux_operator(sys, phi, t, k)
    if sys.frame is None:
        return j
    w = frame_unitary(sys, t)
    return w @ j @ dagger(w)


@functools.lru_cache(maxsize=128)
def is_static(sys: DrivenSystem) -> bool:
    """True when the frame Hamiltonian does not depend on time."""
    rng = np.random.default_rng(0)
    phi = sys.phases + rng.uniform(-np.pi, np.pi, size=(3, sys.n_modes))
    ts = sys.period * np.array([0.0, 0.1234, 0.377, 0.6180, 0.8901])
    h = effective_hamiltonian(sys, phi, ts)
    scale = 1.0 + np.max(np.abs(h))
    return bool(np.max(np.abs(h - h[:, :1])) <= 1e-12 * scale)


def default_steps(sys: DrivenSystem) -> int:
    """Integration steps per period: ``POINTS_PER_PERIOD`` per fastest drive cycle."""
    cycles = sys.period * np.max(sys.frequencies) / (2 * np.pi)
    return int(POINTS_PER_PERIOD * max(1, round(cycles)))


def _cfm4_step(sys, phi, t, h):
    ha = effective_hamiltonian(sys, phi, t + _C1 * h)
    hb = effective_hamiltonian(sys, phi, t + _C2 * h)
    first = expm_hermitian(h * (_A1 * ha + _A2 * hb))
    second = expm_hermitian(h * (_A2 * ha + _A1 * hb))
    return second @ first


def _integrate(sys, phi, checkpoints, n_steps):
    """Propagators at increasing ``checkpoints`` (first is 0) with ~``n_steps`` per period."""
    h_target = sys.period / n_steps
    batch = phi.shape[:-1]
    u = np.broadcast_to(np.eye(sys.dim, dtype=complex), batch + (sys.dim, sys.dim)).copy()
    out = np.empty(batch + (len(checkpoints), sys.dim, sys.dim), dtype=complex)
    out[..., 0, :, :] = u
    for i in range(1, len(checkpoints)):
        a, b = checkpoints[i - 1], checkpoints[i]
        k = max(1, math.ceil((b - a) / h_target - 1e-9))
        h = (b - a) / k
        for j in range(k):
            u = _cfm4_step(sys, phi, a + j * h, h) @ u
        out[..., i, :, :] = u
    return out


def unitary_power(m, p):
    """``m ** p`` for (batched) unitary ``m`` and integer array ``p``.

    Returns shape ``batch + p.shape + (d, d)``.
    """
    p = np.asarray(p)
    w, v = np.linalg.eig(m)
    vinv = np.linalg.inv(v)
    # unit-modulus eigenvalues; use phases so large powers stay unitary
    theta = np.angle(w)
    ph = np.exp(1j * np.multiply.outer(theta, p))  # batch + (d,) + p.shape
    ph = np.moveaxis(ph, m.ndim - 2, -1)  # batch + p.shape + (d,)
    vb = v.reshape(v.shape[:-2] + (1,) * p.ndim + v.shape[-2:])
    vib = vinv.reshape(vinv.shape[:-2] + (1,) * p.ndim + vinv.shape[-2:])
    res = (vb * ph[..., None, :]) @ vib
    # near-degenerate eigenvectors can be ill conditioned; fall back to Schur
    cond = np.max(np.abs(dagger(v) @ v - np.eye(m.shape[-1])), axis=(-1, -2))
    bad = np.argwhere(np.atleast_1d(cond > 1e-8))
    if bad.size:
        flat_m = m.reshape((-1,) + m.shape[-2:])
        flat_r = res.reshape((-1,) + p.shape + m.shape[-2:])
        for (i,) in bad.reshape(-1, 1) if m.ndim == 3 else [(0,)]:
            tri, z = scipy.linalg.schur(flat_m[i], output="complex")
            d = np.angle(np.diag(tri))
            flat_r[i] = (z * np.exp(1j * np.multiply.outer(p, d))[..., None, :]) @ dagger(z)
        res = flat_r.reshape(res.shape)
    return res


def propagate(sys: DrivenSystem, phi, times, tol: float = 1e-10, n_steps: int | None = None,
              max_doublings: int = 10):
    """Frame propagators ``U_phi(t)`` for every phase vector and time.

    Parameters
    ----------
    phi : array (..., N_D)
    times : array (T,), non-negative
    tol : float
        Required agreement between successive step halvings (max entry).

    Returns
    -------
    ndarray of shape ``phi.shape[:-1] + (T, dim, dim)``.
    """
    phi = sys.check_phases(phi)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.ndim != 1 or np.any(times < 0) or not np.all(np.isfinite(times)):
        raise SpecificationError("times must be a finite, non-negative 1-D array")
    if is_static(sys):
        w, v = np.linalg.eigh(effective_hamiltonian(sys, phi, 0.0))
        ph = np.exp(-1j * w[..., None, :] * times[:, None])  # batch + (T, d)
        v = v[..., None, :, :]
        return (v * ph[..., None, :]) @ dagger(v)
    tau = sys.period
    m = np.floor(times / tau).astype(np.int64)
    s = times - m * tau
    wrap = s >= tau * (1 - 1e-13)
    m[wrap] += 1
    s[wrap] = 0.0
    nodes, inverse = np.unique(s, return_inverse=True)
    checkpoints = np.concatenate([[0.0], nodes[nodes > 0], [tau]])
    index = np.searchsorted(checkpoints, nodes)
    n = n_steps or default_steps(sys)
    coarse = _integrate(sys, phi, checkpoints, n)
    err = np.inf
    for _ in range(max_doublings):
        n *= 2
        fine = _integrate(sys, phi, checkpoints, n)
        err = float(np.max(np.abs(fine - coarse)))
        coarse = fine
        if err <= tol:
            break
    else:
        raise IntegrationError(f"propagator did not converge to {tol:g} (defect {err:.3e})", err)
    mono = coarse[..., -1, :, :]
    within = coarse[..., index[inverse], :, :]
    if not np.any(m):
        return within
    return within @ unitary_power(mono, m)


@dataclass(frozen=True, eq=False)
class Propagator:
    """Propagators on a time grid at fixed phases."""

    time_grid: np.ndarray
    unitaries: np.ndarray
    phases: np.ndarray

    @property
    def unitarity_defect(self) -> float:
        return unitarity_defect(self.unitaries)

    def between(self, i: int, j: int) -> np.ndarray:
        """``U(t_j <- t_i)`` from two grid entries."""
        return self.unitaries[j] @ dagger(self.unitaries[i])


def evolve(sys: DrivenSystem, phi, t_grid, tolerance: float = 1e-10) -> Propagator:
    """Propagator ``U_phi(t)`` on a strictly increasing grid starting at 0."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or t_grid[0] != 0 or np.any(np.diff(t_grid) <= 0):
        raise SpecificationError("t_grid must be strictly increasing and start at 0")
    phi = sys.check_phases(phi)
    if phi.ndim != 1:
        raise SpecificationError("evolve takes a single phase vector")
    u = propagate(sys, phi, t_grid, tol=tolerance)
    defect = unitarity_defect(u)
    if defect > UNITARITY_TOL:
        raise IntegrationError(f"unitarity defect {defect:.3e} exceeds {UNITARITY_TOL}", defect)
    return Propagator(t_grid, u, phi.copy())


class PropagatorCache:
    """Propagators at fixed times, memoized by phase vector.

    Phases are keyed after rounding to 14 decimals; a sweep over a counting
    grid reuses every shifted phase it has already solved.
    """

    def __init__(self, sys: DrivenSystem, times, tol: float = 1e-10):
        self.sys = sys
        self.times = np.atleast_1d(np.asarray(times, dtype=float))
        self.tol = tol
        self._store: dict[tuple, np.ndarray] = {}

    @staticmethod
    def _key(row):
        return tuple(np.round(row, 14).tolist())

    def __len__(self):
        return len(self._store)

    def get(self, phi) -> np.ndarray:
        phi = self.sys.check_phases(phi)
        flat = phi.reshape(-1, phi.shape[-1])
        keys = [self._key(r) for r in flat]
        missing = {}
        for key, row in zip(keys, flat):
            if key not in self._store and key not in missing:
                missing[key] = row
        if missing:
            rows = np.array(list(missing.values()))
            us = propagate(self.sys, rows, self.times, tol=self.tol)
            for key, u in zip(missing, us):
                self._store.setdefault(key, u)
        out = np.stack([self._store[k] for k in keys])
        return out.reshape(phi.shape[:-1] + out.shape[1:])


def fold_quasienergy(e, period):
    """Fold into the first Brillouin zone ``(-pi/tau, pi/tau]``."""
    zone = 2 * np.pi / period
    folded = np.asarray(e, dtype=float) - zone * np.floor(np.asarray(e) / zone + 0.5)
    return np.where(folded <= -np.pi / period, folded + zone, folded)


def _fix_phase(vecs):
    """Make the first non-negligible component of each column real and positive."""
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        i = int(np.argmax(np.abs(col) > 1e-8))
        vecs[:, j] = col * np.exp(-1j * np.angle(col[i]))
    return vecs


def period_grid(sys: DrivenSystem, n_points: int | None = None) -> np.ndarray:
    n = n_points or default_steps(sys)
    return np.linspace(0.0, sys.period, n + 1)


@dataclass(frozen=True, eq=False)
class FloquetDecomposition:
    """Floquet data at one phase vector.

    ``modes[i, :, mu]`` is ``|u_mu(t_i)>`` on ``time_grid`` (one period,
    endpoint included). Quasienergies are sorted in ascending order.
    """

    phases: np.ndarray
    period: float
    quasienergies: np.ndarray
    time_grid: np.ndarray
    modes: np.ndarray
    coefficients: np.ndarray
    gradients: np.ndarray | None
    degenerate: bool

    @property
    def initial_modes(self) -> np.ndarray:
        return self.modes[0]

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.coefficients) ** 2

    def modes_at(self, t) -> np.ndarray:
        """Floquet modes at times on the grid (modulo the period).

        Time-independent modes (static frame Hamiltonians) are returned for
        any ``t``.
        """
        t = np.asarray(t, dtype=float)
        if np.max(np.abs(self.modes - self.modes[0])) < 1e-12:
            return np.broadcast_to(self.modes[0], t.shape + self.modes.shape[1:])
        s = np.mod(t, self.period)
        step = self.time_grid[1] - self.time_grid[0]
        idx = np.rint(s / step).astype(int) % (len(self.time_grid) - 1)
        if np.max(np.abs(idx * step - s) % self.period) > 1e-9 * max(1.0, self.period):
            raise SpecificationError("requested times are not on the Floquet time grid")
        return self.modes[idx]

    def with_state(self, matter_state) -> "FloquetDecomposition":
        psi = as_state(matter_state, self.modes.shape[1])
        c = dagger(self.initial_modes) @ psi
        return FloquetDecomposition(self.phases, self.period, self.quasienergies, self.time_grid,
                                    self.modes, c, self.gradients, self.degenerate)

    def floquet_state(self, coefficients) -> np.ndarray:
        """Matter state ``sum_mu c_mu |u_mu(0)>``, normalized."""
        c = np.asarray(coefficients, dtype=complex)
        psi = self.initial_modes @ c
        return psi / np.linalg.norm(psi)

    def reconstruct(self, t_index=None) -> np.ndarray:
        """``sum_mu exp(-i E_mu t) |u_mu(t)><u_mu(0)|`` on the grid."""
        t = self.time_grid if t_index is None else self.time_grid[t_index]
        u = self.modes if t_index is None else self.modes[t_index]
        ph = np.exp(-1j * np.multiply.outer(t, self.quasienergies))
        return (u * ph[..., None, :]) @ dagger(self.initial_modes)


def floquet_decompose(sys: DrivenSystem, phi, matter_initial_state=None, n_points: int | None = None,
                      tol: float = 1e-12, gradients: bool = True) -> FloquetDecomposition:
    """Diagonalize the monodromy ``U_phi(tau)`` and build Floquet modes on one period.

    Degenerate monodromy eigenvalues (within ``DEGENERACY_TOL``) are flagged;
    inside a degenerate eigenspace the basis diagonalizes the time-averaged
    flux operator of mode 1.
    """
    phi = np.array(sys.check_phases(phi), dtype=float)
    if phi.ndim != 1:
        raise SpecificationError("floquet_decompose takes a single phase vector")
    grid = period_grid(sys, n_points)
    u = propagate(sys, phi, grid, tol=tol)
    mono = u[-1]
    tri, z = scipy.linalg.schur(mono, output="complex")
    lam = np.diag(tri)
    energies = fold_quasienergy(-np.angle(lam) / sys.period, sys.period)
    order = np.argsort(energies, kind="stable")
    energies, z = energies[order], z[:, order]
    gaps = np.abs(np.diff(np.exp(-1j * energies * sys.period)))
    # also compare first and last across the zone edge
    wrap_gap = np.abs(np.exp(-1j * energies[0] * sys.period) - np.exp(-1j * energies[-1] * sys.period))
    degenerate = bool(np.any(gaps < DEGENERACY_TOL) or (len(energies) > 1 and wrap_gap < DEGENERACY_TOL))
    if degenerate:
        z = _split_degenerate(sys, phi, grid, u, energies, z)
    z = _fix_phase(z)
    ph = np.exp(1j * np.multiply.outer(grid, energies))
    modes = (u @ z) * ph[:, None, :]
    c = None
    if matter_initial_state is not None:
        psi = as_state(matter_initial_state, sys.dim)
        c = dagger(z) @ psi
    decomp = FloquetDecomposition(phi, sys.period, energies, grid, modes, c, None, degenerate)
    if gradients and not degenerate:
        decomp = FloquetDecomposition(phi, sys.period, energies, grid, modes, c,
                                      hellmann_feynman_gradient(sys, decomp), degenerate)
    return decomp


def _time_averaged_flux(sys, phi, grid, u, k):
    j = effective_flux(sys, phi, grid, k)
    heis = dagger(u) @ j @ u
    return np.trapezoid(heis, grid, axis=0) / sys.period


def _split_degenerate(sys, phi, grid, u, energies, z):
    z = z.copy()
    zone_phase = np.exp(-1j * energies * sys.period)
    avg = _time_averaged_flux(sys, phi, grid, u, 1)
    used = np.zeros(len(energies), dtype=bool)
    for i in range(len(energies)):
        if used[i]:
            continue
        group = np.flatnonzero(np.abs(zone_phase - zone_phase[i]) < DEGENERACY_TOL)
        used[group] = True
        if len(group) < 2:
            continue
        sub = z[:, group]
        block = dagger(sub) @ avg @ sub
        _, vecs = np.linalg.eigh(0.5 * (block + dagger(block)))
        z[:, group] = sub @ vecs
    return z


def hellmann_feynman_gradient(sys: DrivenSystem, decomp: FloquetDecomposition) -> np.ndarray:
    """Time-averaged flux expectation in each Floquet mode, shape (dim, N_D)."""
    grid = decomp.time_grid
    out = np.empty((decomp.modes.shape[2], sys.n_modes))
    for k in range(1, sys.n_modes + 1):
        j = effective_flux(sys, decomp.phases, grid, k)
        expect = np.einsum("tim,tij,tjm->tm", np.conj(decomp.modes), j, decomp.modes).real
        out[:, k - 1] = np.trapezoid(expect, grid, axis=0) / sys.period
    return out


def finite_difference_gradient(sys: DrivenSystem, decomp: FloquetDecomposition, h: float = 1e-4,
                               tol: float = 1e-13) -> np.ndarray:
    """Central differences of quasienergies with overlap-based branch tracking."""
    zone = 2 * np.pi / sys.period
    ref = decomp.initial_modes
    out = np.empty((ref.shape[1], sys.n_modes))
    n_points = len(decomp.time_grid) - 1
    for k in range(sys.n_modes):
        shifted = []
        for sign in (1, -1):
            phi = decomp.phases.copy()
            phi[k] += sign * h
            d = floquet_decompose(sys, phi, n_points=n_points, tol=tol, gradients=False)
            match = np.argmax(np.abs(dagger(d.initial_modes) @ ref), axis=0)
            if len(set(match.tolist())) != len(match):
                raise DegeneracyError("branch tracking failed: overlaps are ambiguous")
            shifted.append(d.quasienergies[match])
        diff = shifted[0] - shifted[1]
        diff = (diff + zone / 2) % zone - zone / 2
        out[:, k] = diff / (2 * h)
    return out


def quasienergy_gradient(sys: DrivenSystem, phi, decomposition: FloquetDecomposition | None = None,
                         method: str = "hellmann-feynman") -> np.ndarray:
    """Gradients ``dE_mu/dphi_k`` as a (dim, N_D) array.

    ``method`` is ``"hellmann-feynman"`` (time-averaged photon flux) or
    ``"finite-difference"``.
    """
    if decomposition is None:
        decomposition = floquet_decompose(sys, phi, gradients=False)
    if method == "hellmann-feynman":
        if decomposition.degenerate:
            raise DegeneracyError("degenerate quasienergies: use method='finite-difference' "
                                  "with explicit eigenvector tracking")
        return hellmann_feynman_gradient(sys, decomposition)
    if method == "finite-difference":
        return finite_difference_gradient(sys, decomposition)
    raise SpecificationError(f"unknown gradient method {method!r}")


def write_floquet_csv(path, decomp: FloquetDecomposition):
    """Debug dump: ``mu, E_mu*tau, dE/dphi_1..N``."""
    import csv

    grads = decomp.gradients
    n_modes = 0 if grads is None else grads.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu", "E_tau"] + [f"dE_dphi_{k + 1}" for k in range(n_modes)])
        for mu, e in enumerate(decomp.quasienergies):
            row = [mu + 1, repr(float(e * decomp.period))]
            if grads is not None:
                row += [repr(float(g)) for g in grads[mu]]
            w.writerow(row)
