"""Driven light-matter systems and Gaussian photonic states.

Matter operators are plain complex ``numpy`` arrays. A drive mode ``k``
contributes

    (Omega_k / 2) * (V_k exp(-i theta_k) + V_k^dag exp(+i theta_k)),
    theta_k = omega_k t - phi_k,

to the semiclassical Hamiltonian. For a Hermitian coupling this is the
familiar ``Omega_k V_k cos(omega_k t - phi_k)``; a ladder coupling such as
``sigma_plus`` gives the rotating-wave (Jaynes-Cummings) drive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import IncommensurateError, SpecificationError

HERMITIAN_TOL = 1e-12
COMMENSURATE_RTOL = 1e-9

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = SIGMA_PLUS.T.copy()


def wrap_phase(phi):
    """Map phases to [-pi, pi)."""
    return (np.asarray(phi, dtype=float) + np.pi) % (2 * np.pi) - np.pi


def hermiticity_defect(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a - np.conj(np.swapaxes(a, -1, -2))))) if a.size else 0.0


def as_operator(a, dim=None, hermitian=False, name="operator") -> np.ndarray:
    """Validate and return a square complex matrix (read-only copy)."""
    a = np.array(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise SpecificationError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise SpecificationError(f"{name} has dimension {a.shape[0]}, expected {dim}")
    if hermitian:
        defect = hermiticity_defect(a)
        if defect > HERMITIAN_TOL:
            raise SpecificationError(f"{name} is not Hermitian (defect {defect:.3e})")
    a.setflags(write=False)
    return a


def as_state(psi, dim, name="matter state") -> np.ndarray:
    psi = np.array(psi, dtype=complex).reshape(-1)
    if psi.shape != (dim,):
        raise SpecificationError(f"{name} must have length {dim}, got {psi.shape[0]}")
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise SpecificationError(f"{name} is the zero vector")
    return psi / norm


@dataclass(frozen=True, eq=False)
class DriveMode:
    """One classical drive: frequency, amplitude ``Omega = 2 g alpha``, mean phase, coupling."""

    frequency: float
    amplitude: float
    phase: float
    coupling: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.frequency) or self.frequency <= 0:
            raise SpecificationError(f"drive frequency must be > 0, got {self.frequency}")
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise SpecificationError(f"drive amplitude must be >= 0, got {self.amplitude}")
        object.__setattr__(self, "frequency", float(self.frequency))
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "phase", float(wrap_phase(self.phase)))
        object.__setattr__(self, "coupling", as_operator(self.coupling, name="coupling"))

    @property
    def hermitian_coupling(self) -> bool:
        return hermiticity_defect(self.coupling) <= HERMITIAN_TOL


def commensurate_period(frequencies: Sequence[float], rtol: float = COMMENSURATE_RTOL,
                        max_denominator: int = 10_000) -> float:
    """Smallest ``tau > 0`` with ``omega_k tau`` a multiple of ``2 pi`` for every k.

    Raises
    ------
    IncommensurateError
        If some frequency ratio is not rational (within ``rtol``) with
        denominator at most ``max_denominator``.
    """
    freqs = [float(w) for w in frequencies]
    if not freqs:
        raise SpecificationError("at least one drive frequency is required")
    if any(w <= 0 or not math.isfinite(w) for w in freqs):
        raise SpecificationError(f"frequencies must be finite and > 0: {freqs}")
    ref = freqs[0]
    ratios = []
    for w in freqs:
        r = Fraction(w / ref).limit_denominator(max_denominator)
        if abs(float(r) * ref - w) > rtol * w:
            raise IncommensurateError(f"frequencies {ref} and {w} are incommensurate")
        ratios.append(r)
    num = reduce(math.gcd, (r.numerator for r in ratios))
    den = reduce(lambda a, b: a * b // math.gcd(a, b), (r.denominator for r in ratios))
    return 2 * math.pi / (ref * num / den)


@dataclass(frozen=True, eq=False)
class DrivenSystem:
    """Matter Hamiltonian plus drive modes.

    ``frame`` is an optional Hermitian generator ``G``. When given, every
    propagator, Floquet mode and density matrix is expressed in the frame
    rotating with ``exp(-i G t)``; ``exp(-i G tau)`` must be a phase so that
    the frame respects the drive period. Moment-generating functions and
    photon statistics do not depend on the frame.
    """

    matter_hamiltonian: np.ndarray
    modes: tuple = ()
    frame: np.ndarray | None = None
    period: float = field(init=False)

    def __post_init__(self):
        h = as_operator(self.matter_hamiltonian, hermitian=True, name="matter Hamiltonian")
        object.__setattr__(self, "matter_hamiltonian", h)
        modes = tuple(self.modes)
        if not modes:
            raise SpecificationError("a driven system needs at least one mode")
        for k, m in enumerate(modes):
            if not isinstance(m, DriveMode):
                raise SpecificationError(f"mode {k} is not a DriveMode")
            if m.coupling.shape != h.shape:
                raise SpecificationError(
                    f"coupling of mode {k} has shape {m.coupling.shape}, matter dimension is {h.shape[0]}")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "period", commensurate_period([m.frequency for m in modes]))
        if self.frame is not None:
            g = as_operator(self.frame, dim=h.shape[0], hermitian=True, name="frame generator")
            w = np.linalg.eigvalsh(g) * self.period
            # exp(-i G tau) must be proportional to the identity
            if np.max(np.abs(np.exp(-1j * (w - w[0])) - 1)) > 1e-9:
                raise SpecificationError("frame generator is not compatible with the drive period")
            object.__setattr__(self, "frame", g)

    @property
    def dim(self) -> int:
        return self.matter_hamiltonian.shape[0]

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([m.frequency for m in self.modes])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([m.amplitude for m in self.modes])

    @property
    def phases(self) -> np.ndarray:
        return np.array([m.phase for m in self.modes])

    @property
    def couplings(self) -> np.ndarray:
        return np.stack([m.coupling for m in self.modes])

    def check_phases(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if phi.shape[-1:] != (self.n_modes,):
            raise SpecificationError(
                f"phase vector has trailing length {phi.shape[-1:] or 0}, system has {self.n_modes} modes")
        return phi


def _drive_angles(sys: DrivenSystem, phi, t):
    """``omega_k t - phi_k`` with shape ``phi.shape[:-1] + t.shape + (n_modes,)``."""
    phi = sys.check_phases(phi)
    t = np.asarray(t, dtype=float)
    batch = phi.shape[:-1]
    tt = t.reshape((1,) * len(batch) + t.shape + (1,))
    return tt * sys.frequencies - phi.reshape(batch + (1,) * t.ndim + (sys.n_modes,))


def build_semiclassical_hamiltonian(sys: DrivenSystem, phi, t) -> np.ndarray:
    """Lab-frame semiclassical Hamiltonian ``H_phi(t)``.

    ``phi`` may carry leading batch axes and ``t`` may be an array; the
    result has shape ``phi.shape[:-1] + t.shape + (dim, dim)``.
    """
    e = 0.5 * sys.amplitudes * np.exp(-1j * _drive_angles(sys, phi, t))
    drive = np.einsum("...k,kij->...ij", e, sys.couplings)
    return sys.matter_hamiltonian + drive + np.conj(np.swapaxes(drive, -1, -2))


def photon_flux_operator(sys: DrivenSystem, phi, t, k: int) -> np.ndarray:
    """Lab-frame photon-flux operator ``dH_phi(t)/dphi_k`` (``k`` is 1-based)."""
    if not 1 <= k <= sys.n_modes:
        raise SpecificationError(f"mode index {k} outside 1..{sys.n_modes}")
    mode = sys.modes[k - 1]
    theta = _drive_angles(sys, phi, t)[..., k - 1]
    term = (0.5j * mode.amplitude * np.exp(-1j * theta))[..., None, None] * mode.coupling
    return term + np.conj(np.swapaxes(term, -1, -2))


@dataclass(frozen=True, eq=False)
class GaussianPhotonState:
    """Gaussian photon-number amplitudes around large mean occupations.

    ``covariance`` follows the standard-deviation convention: the amplitude
    is ``exp(-(n - nbar) Sigma^-2 (n - nbar) / 4)``, so ``Sigma^2`` is the
    covariance of the photon-number distribution.
    """

    mean_photons: np.ndarray
    covariance: np.ndarray
    mean_phases: np.ndarray

    def __post_init__(self):
        nbar = np.atleast_1d(np.asarray(self.mean_photons, dtype=float))
        n = nbar.shape[0]
        sigma = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if sigma.shape != (n, n):
            raise SpecificationError(f"covariance must be {n}x{n}, got {sigma.shape}")
        if np.max(np.abs(sigma - sigma.T)) > 1e-12 * max(1.0, np.max(np.abs(sigma))):
            raise SpecificationError("covariance must be symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        if np.min(np.linalg.eigvalsh(sigma)) <= 0:
            raise SpecificationError("covariance must be positive definite")
        phases = wrap_phase(np.atleast_1d(np.asarray(self.mean_phases, dtype=float)))
        if phases.shape != (n,):
            raise SpecificationError(f"mean phases must have length {n}")
        for name, val in (("mean_photons", nbar), ("covariance", sigma), ("mean_phases", phases)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def coherent(cls, mean_photons, mean_phases) -> "GaussianPhotonState":
        """Product of coherent states: ``Sigma_kk^2 = nbar_k``."""
        nbar = np.atleast_1d(np.asarray(mean_photons, dtype=float))
        return cls(nbar, np.diag(np.sqrt(nbar)), mean_phases)

    @classmethod
    def diagonal(cls, variances, mean_photons=None, mean_phases=None) -> "GaussianPhotonState":
        var = np.atleast_1d(np.asarray(variances, dtype=float))
        nbar = np.zeros_like(var) if mean_photons is None else mean_photons
        phases = np.zeros_like(var) if mean_phases is None else mean_phases
        return cls(nbar, np.diag(np.sqrt(var)), phases)

    @property
    def n_modes(self) -> int:
        return self.mean_photons.shape[0]

    @property
    def variance(self) -> np.ndarray:
        """Photon-number covariance matrix ``Sigma^2``."""
        return self.covariance @ self.covariance

    @property
    def sigmas(self) -> np.ndarray:
        """Per-mode photon-number standard deviations."""
        return np.sqrt(np.diag(self.variance))

    def amplitudes(self, n) -> np.ndarray:
        """Fock amplitudes ``a_n`` for integer photon-number vectors ``n`` (..., N_D)."""
        n = np.asarray(n, dtype=float)
        d = n - self.mean_photons
        inv = np.linalg.inv(self.variance)
        quad = np.einsum("...i,ij,...j->...", d, inv, d)
        norm = (2 * np.pi) ** (self.n_modes / 4) * np.sqrt(np.linalg.det(self.covariance))
        return np.exp(-0.25 * quad + 1j * (n @ self.mean_phases)) / norm

    def phase_weight_transform(self):
        """Affine map from standard Gauss-Hermite nodes to phases.

        Returns ``(center, L)`` such that ``phi = center + x @ L.T`` turns the
        weight ``exp(-2 dphi Sigma^2 dphi)`` into ``exp(-|x|^2)``.
        """
        w, q = np.linalg.eigh(self.variance)
        return self.mean_phases.copy(), q / np.sqrt(2 * w)
