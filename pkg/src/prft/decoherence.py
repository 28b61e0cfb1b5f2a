"""Kraus operators, coherence integrals and the semiclassical reduced density matrix."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .errors import SpecificationError
from .model import DrivenSystem, GaussianPhotonState, as_operator, as_state
from .propagator import FloquetDecomposition, dagger, propagate
from .statistics import PhotonDistribution


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Matter density matrix; validated on construction."""

    entries: np.ndarray

    def __post_init__(self):
        rho = np.array(self.entries, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise SpecificationError("density matrix must be square")
        if np.max(np.abs(rho - dagger(rho))) > 1e-10:
            raise SpecificationError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1) > 1e-10:
            raise SpecificationError(f"density matrix trace {np.trace(rho).real:.12f} != 1")
        if np.min(np.linalg.eigvalsh(0.5 * (rho + dagger(rho)))) < -1e-9:
            raise SpecificationError("density matrix has negative eigenvalues")
        rho.setflags(write=False)
        object.__setattr__(self, "entries", rho)

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, np.conj(psi)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))


def observable_expectation(rho: DensityMatrix, observable) -> float:
    """``tr(rho O)`` for Hermitian ``O``."""
    op = as_operator(observable, dim=rho.dim, hermitian=True, name="observable")
    val = np.trace(rho.entries @ op)
    if abs(val.imag) > 1e-10:
        raise SpecificationError(f"expectation value has imaginary part {val.imag:.3e}")
    return float(val.real)


# ---------------------------------------------------------------- Kraus operators

@dataclass(frozen=True, eq=False)
class KrausSet:
    """Kraus operators ``operators[m_1, ..., m_N]`` for photon numbers ``reference + offsets``."""

    offsets: tuple
    operators: np.ndarray
    reference: np.ndarray
    time: float

    @property
    def n_modes(self) -> int:
        return self.operators.ndim - 2

    def completeness_defect(self) -> float:
        d = self.operators.shape[-1]
        ops = self.operators.reshape(-1, d, d)
        total = np.einsum("pji,pjk->ik", np.conj(ops), ops)
        return float(np.max(np.abs(total - np.eye(d))))

    def min_eigenvalue(self) -> float:
        d = self.operators.shape[-1]
        ops = self.operators.reshape(-1, d, d)
        return float(np.min(np.linalg.eigvalsh(dagger(ops) @ ops)))

    def conditional(self, psi) -> np.ndarray:
        """Unnormalized conditional states ``K_n psi``, shape ``lattice + (d,)``."""
        return self.operators @ np.asarray(psi, dtype=complex)

    def distribution(self, rho) -> PhotonDistribution:
        """``p_n = tr(K_n rho K_n^dag)``."""
        rho = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
        p = np.real(np.einsum("...ij,jk,...ik->...", self.operators, rho, np.conj(self.operators)))
        total = p.sum()
        return PhotonDistribution(self.offsets, p / total, self.reference, self.time, abs(total - 1))

    def apply(self, rho) -> DensityMatrix:
        """Non-selective channel ``sum_n K_n rho K_n^dag``."""
        rho = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
        d = self.operators.shape[-1]
        ops = self.operators.reshape(-1, d, d)
        out = np.einsum("pij,jk,plk->il", ops, rho, np.conj(ops))
        return DensityMatrix(0.5 * (out + dagger(out)))


def _grid_size(sigma, points_per_width, span):
    """Power-of-two grid count: ``>= points_per_width`` per ``1/sigma`` and ``>= span`` lattice sites."""
    need = max(2 * math.pi * sigma * points_per_width, span)
    return 1 << int(math.ceil(math.log2(need)))


def kraus_operators(sys: DrivenSystem, state: GaussianPhotonState, t: float, points_per_width: int = 16,
                    window_widths: float = 8.0, linearized: bool = False,
                    decomposition: FloquetDecomposition | None = None, tol: float = 1e-10) -> KrausSet:
    """Kraus operators of the photonic measurement after time ``t``.

    ``K_n = c e^{i n . phibar} sum_phi U_phi(t) g(phi) e^{i (n - n0) . (phi - phibar)}``
    with the Gaussian phase amplitude ``g`` sampled on a uniform grid of
    ``phibar +- window_widths/sigma`` per mode and zero-padded to a power of
    two; ``c`` makes ``sum_n K_n^dag K_n = 1``. Operators live in the system
    frame; without a frame the free photon phase ``exp(-i omega . n t)`` is
    included. ``linearized`` replaces ``U_phi`` by its Floquet form with
    quasienergies expanded to first order around ``phibar``.
    """
    if state.n_modes != sys.n_modes:
        raise SpecificationError("photon state and system have different mode counts")
    sig = state.sigmas
    if decomposition is None:
        from .propagator import floquet_decompose
        decomposition = floquet_decompose(sys, state.mean_phases)
    if decomposition.gradients is None:
        raise SpecificationError("decomposition needs gradients to size the lattice")
    drift = np.max(np.abs(decomposition.gradients), axis=0) * abs(t)
    sizes, deltas, halfs = [], [], []
    for k in range(sys.n_modes):
        span = 2 * (window_widths * sig[k] + drift[k]) + 4
        m = _grid_size(sig[k], points_per_width, span)
        delta = 2 * math.pi / m
        half = int(math.floor(window_widths / sig[k] / delta))
        if half < points_per_width:
            raise SpecificationError("phase grid does not resolve the Gaussian amplitude")
        sizes.append(m)
        deltas.append(delta)
        halfs.append(half)
    local = [np.arange(-h, h + 1) * d for h, d in zip(halfs, deltas)]
    mesh = np.meshgrid(*local, indexing="ij")
    dphi = np.stack(mesh, axis=-1)
    ref = np.rint(state.mean_photons)
    frac = state.mean_photons - ref
    g = np.exp(-np.einsum("...i,ij,...j->...", dphi, state.variance, dphi) - 1j * dphi @ frac)
    phis = state.mean_phases + dphi
    if linearized:
        d = decomposition
        lin_e = d.quasienergies + dphi @ d.gradients.T  # (..., dim)
        u_t = propagate(sys, state.mean_phases, [t], tol=tol)[0] @ d.initial_modes
        u_t = u_t * np.exp(1j * d.quasienergies * t)
        u = np.einsum("im,...m,jm->...ij", u_t, np.exp(-1j * lin_e * t), np.conj(d.initial_modes))
    else:
        u = propagate(sys, phis.reshape(-1, sys.n_modes), [t], tol=tol)[:, 0]
        u = u.reshape(phis.shape[:-1] + (sys.dim, sys.dim))
    a = np.zeros(tuple(sizes) + (sys.dim, sys.dim), dtype=complex)
    idx = np.ix_(*[np.arange(-h, h + 1) % m for h, m in zip(halfs, sizes)])
    a[idx] = u * g[..., None, None]
    axes = tuple(range(sys.n_modes))
    total = float(np.prod(sizes))
    ops = np.fft.ifftn(a, axes=axes) * math.sqrt(total / np.sum(np.abs(g) ** 2))
    ops = np.fft.fftshift(ops, axes=axes)
    offsets = tuple(np.fft.fftshift(np.fft.fftfreq(m) * m).astype(int) for m in sizes)
    omesh = np.meshgrid(*offsets, indexing="ij")
    n_abs = [o + r for o, r in zip(omesh, ref)]
    phase = sum(n * p for n, p in zip(n_abs, state.mean_phases))
    if sys.frame is None:
        phase = phase - t * sum(n * w for n, w in zip(n_abs, sys.frequencies))
    ops = ops * np.exp(1j * phase)[..., None, None]
    return KrausSet(offsets, ops, ref, float(t))


# ---------------------------------------------------------------- coherence

def coherence_integral(initial: PhotonDistribution, shift_a, shift_b) -> float:
    """Overlap ``sum_n sqrt(p_{n-a} p_{n-b})`` of two shifted copies of ``initial``.

    Fractional shifts use linear interpolation; equal shifts give exactly 1.
    """
    a = np.atleast_1d(np.asarray(shift_a, dtype=float))
    b = np.atleast_1d(np.asarray(shift_b, dtype=float))
    if a.shape != (initial.n_modes,) or b.shape != a.shape:
        raise SpecificationError("shifts must have one entry per distribution axis")
    if np.array_equal(a, b):
        return 1.0
    rel = a - b
    p = initial.probabilities
    if np.any(np.abs(rel) > np.array(p.shape)):
        return 0.0
    q = scipy.ndimage.shift(p, rel, order=1, mode="constant", cval=0.0, prefilter=False)
    c = float(np.sum(np.sqrt(np.clip(p, 0, None) * np.clip(q, 0, None))))
    return min(c, 1.0)


def gaussian_coherence(variance, shift_a, shift_b) -> float:
    """Closed form ``exp(-(a-b) Sigma^-2 (a-b) / 8)`` for a Gaussian distribution."""
    var = np.atleast_2d(np.asarray(variance, dtype=float))
    d = np.atleast_1d(np.asarray(shift_a, dtype=float) - np.asarray(shift_b, dtype=float))
    return float(np.exp(-d @ np.linalg.solve(var, d) / 8))


def coherence_matrix(decomp: FloquetDecomposition, t: float, initial: PhotonDistribution | None = None,
                     variance=None, modes=None) -> np.ndarray:
    """``C[mu, nu]`` for Floquet drifts ``t grad E``.

    Uses the lattice distribution ``initial`` when given (its axes map to
    ``modes``, default all), else the Gaussian closed form with ``variance``.
    """
    if decomp.gradients is None:
        raise SpecificationError("decomposition needs gradients")
    n = decomp.gradients.shape[0]
    modes = list(range(decomp.gradients.shape[1])) if modes is None else [m - 1 for m in modes]
    shifts = t * decomp.gradients[:, modes]
    c = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if initial is not None:
                v = coherence_integral(initial, shifts[i], shifts[j])
            elif variance is not None:
                var = np.atleast_2d(variance)[np.ix_(modes, modes)]
                v = gaussian_coherence(var, shifts[i], shifts[j])
            else:
                raise SpecificationError("give an initial distribution or a variance")
            c[i, j] = c[j, i] = v
    return c


def modes_at(decomp: FloquetDecomposition, t: float, sys: DrivenSystem | None = None) -> np.ndarray:
    """Floquet modes at time ``t``: grid lookup, or exact propagation when ``sys`` is given."""
    if sys is None:
        return decomp.modes_at(t)
    s = float(np.mod(t, decomp.period))
    u = propagate(sys, decomp.phases, [s])[0]
    return (u @ decomp.initial_modes) * np.exp(1j * decomp.quasienergies * s)


def reduced_density_semiclassical(decomp: FloquetDecomposition, coherence, t: float,
                                  sys: DrivenSystem | None = None) -> DensityMatrix:
    """``sum C c_mu c_nu^* exp(i (E_nu - E_mu) t) |u_mu(t)><u_nu(t)|``."""
    if decomp.coefficients is None:
        raise SpecificationError("decomposition has no initial-state coefficients")
    c = decomp.coefficients
    if abs(np.sum(np.abs(c) ** 2) - 1) > 1e-10:
        raise SpecificationError("Floquet coefficients are not normalized")
    cm = np.asarray(coherence, dtype=float)
    u = modes_at(decomp, t, sys)
    e = decomp.quasienergies
    w = cm * np.outer(c, np.conj(c)) * np.exp(1j * (e[None, :] - e[:, None]) * t)
    rho = u @ w @ dagger(u)
    return DensityMatrix(0.5 * (rho + dagger(rho)))


def write_observable_csv(path, times, values: dict, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["t", "observable", "value"])
        for name in sorted(values):
            for t, v in zip(times, values[name]):
                w.writerow([repr(float(t)), name, repr(float(v))])
