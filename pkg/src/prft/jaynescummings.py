"""Two-mode Jaynes-Cummings model: dressed quantities, closed-form MGF, presets.

Energies are in units of the drive amplitude ``Omega``. The semiclassical
drive is ``(Omega(phi)/2) sigma_+ exp(-i omega t) + h.c.`` with
``Omega(phi) = sum_k Omega_k exp(i phi_k)``; in the frame rotating with
``(omega/2) sigma_z`` the Hamiltonian is static,

    H = (Delta/2) sigma_z + (|Omega|/2) (cos a sigma_x - sin a sigma_y),

with ``a = arg Omega(phi)`` and ``Delta = epsilon - omega``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecificationError
from .model import (SIGMA_PLUS, SIGMA_X, SIGMA_Y, SIGMA_Z, DriveMode, DrivenSystem,
                    GaussianPhotonState, as_state, wrap_phase)
from .propagator import FloquetDecomposition, floquet_decompose

# drive frequency in units of Omega; rotating-frame results do not depend on it
DEFAULT_OMEGA = 20.0
FIG2_COEFFICIENTS = (0.93, 0.38)


@dataclass(frozen=True)
class JCParams:
    """Level splitting ``epsilon``, common mode frequency ``omega``, amplitudes and mean phases."""

    epsilon: float
    omega: float
    amplitudes: tuple = (1.0, 1.0)
    phases: tuple = (0.0, np.pi / 2)

    def __post_init__(self):
        amps = tuple(float(a) for a in self.amplitudes)
        phases = tuple(float(p) for p in wrap_phase(self.phases))
        if len(amps) != len(phases) or not amps:
            raise SpecificationError("amplitudes and phases must have equal, nonzero length")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "phases", phases)

    @classmethod
    def from_detuning(cls, detuning=0.05, omega=DEFAULT_OMEGA, amplitudes=(1.0, 1.0),
                      phases=(0.0, np.pi / 2)) -> "JCParams":
        return cls(omega + detuning, omega, amplitudes, phases)

    @property
    def detuning(self) -> float:
        return self.epsilon - self.omega

    @property
    def n_modes(self) -> int:
        return len(self.amplitudes)

    def rabi(self, phi) -> np.ndarray:
        """Complex amplitude ``Omega(phi) = sum_k Omega_k exp(i phi_k)``."""
        phi = np.asarray(phi, dtype=float)
        return np.exp(1j * phi) @ np.asarray(self.amplitudes)

    def system(self, rotating: bool = True) -> DrivenSystem:
        modes = tuple(DriveMode(self.omega, a, p, SIGMA_PLUS)
                      for a, p in zip(self.amplitudes, self.phases))
        frame = 0.5 * self.omega * SIGMA_Z if rotating else None
        return DrivenSystem(0.5 * self.epsilon * SIGMA_Z, modes, frame)


@dataclass(frozen=True, eq=False)
class DressedFrame:
    """Dressed energy ``E``, polar angle ``theta``, azimuth and Bloch operator ``sigma``.

    ``sigma`` is the unit Bloch operator of the rotating-frame Hamiltonian,
    ``H = E sigma``.
    """

    energy: np.ndarray
    theta: np.ndarray
    azimuth: np.ndarray
    sigma: np.ndarray


def dressed_frame(params: JCParams, phi) -> DressedFrame:
    """Dressed quantities at phases ``phi`` (shape ``(..., N_D)``)."""
    omega = params.rabi(phi)
    delta = params.detuning
    mag = np.abs(omega)
    if np.any((mag == 0) & (delta == 0)):
        raise SpecificationError("dressed frame undefined for zero detuning and zero drive")
    energy = 0.5 * np.sqrt(delta ** 2 + mag ** 2)
    theta = np.arctan2(mag, delta)
    az = np.angle(omega)
    st, ct = np.sin(theta)[..., None, None], np.cos(theta)[..., None, None]
    ca, sa = np.cos(az)[..., None, None], np.sin(az)[..., None, None]
    sigma = ct * SIGMA_Z + st * (ca * SIGMA_X - sa * SIGMA_Y)
    return DressedFrame(energy, theta, az, sigma)


def jc_mgf_analytic(params: JCParams, matter_state, chi, t, phi_bar=None) -> np.ndarray:
    """Closed-form dynamical MGF ``<U^dag_{phi-chi/2} U_{phi+chi/2}>``.

    With ``U_phi(t) = cos(E t) - i sin(E t) sigma_phi``:

        M = c_- c_+ + s_- s_+ <sigma_- sigma_+> + i (s_- c_+ <sigma_-> - c_- s_+ <sigma_+>)

    where ``c_pm = cos(E_{phi pm chi/2} t)`` and ``s_pm = sin(E_{phi pm chi/2} t)``.
    Output shape ``chi.shape[:-1] + t.shape``.
    """
    psi = as_state(matter_state, 2)
    chi = np.asarray(chi, dtype=float)
    t = np.asarray(t, dtype=float)
    phi_bar = np.asarray(params.phases if phi_bar is None else phi_bar, dtype=float)
    lo = dressed_frame(params, phi_bar - chi / 2)
    hi = dressed_frame(params, phi_bar + chi / 2)
    exp_lo = np.einsum("i,...ij,j->...", np.conj(psi), lo.sigma, psi)
    exp_hi = np.einsum("i,...ij,j->...", np.conj(psi), hi.sigma, psi)
    exp_both = np.einsum("i,...ij,...jk,k->...", np.conj(psi), lo.sigma, hi.sigma, psi)
    ext = (Ellipsis,) + (None,) * t.ndim
    el, eh = lo.energy[ext] * t, hi.energy[ext] * t
    cl, sl, ch, sh = np.cos(el), np.sin(el), np.cos(eh), np.sin(eh)
    return (cl * ch + sl * sh * exp_both[ext]
            + 1j * (sl * ch * exp_lo[ext] - cl * sh * exp_hi[ext]))


def energy_gradient(params: JCParams, phi) -> np.ndarray:
    """``dE/dphi_k`` of the upper dressed branch, shape ``phi.shape``."""
    phi = np.asarray(phi, dtype=float)
    omega = params.rabi(phi)
    amps = np.asarray(params.amplitudes)
    # d|Omega|^2/dphi_k = 2 Re(conj(Omega) i Omega_k e^{i phi_k})
    d_mag2 = 2 * np.real(np.conj(omega)[..., None] * 1j * amps * np.exp(1j * phi))
    e = 0.5 * np.sqrt(params.detuning ** 2 + np.abs(omega) ** 2)
    return d_mag2 / (8 * e[..., None])


@dataclass(frozen=True, eq=False)
class Preset:
    """Ready-to-run configuration: system, photon state, matter states and times."""

    name: str
    params: JCParams
    system: DrivenSystem
    state: GaussianPhotonState
    matter_states: dict
    times: np.ndarray
    variances: tuple = ()
    decomposition: FloquetDecomposition | None = None
    extra: dict = field(default_factory=dict)

    @property
    def matter_state(self) -> np.ndarray:
        return next(iter(self.matter_states.values()))


def floquet_superposition(decomp: FloquetDecomposition, coefficients) -> np.ndarray:
    """Matter state ``sum_mu c_mu |u_mu(0)>`` with ``c`` normalized to unit length."""
    c = np.asarray(coefficients, dtype=complex)
    return decomp.floquet_state(c / np.linalg.norm(c))


def figure_presets(name: str, omega: float = DEFAULT_OMEGA, tmax: float | None = None,
                   tpoints: int | None = None, variances=None) -> Preset:
    """Figure runs ``fig2``, ``fig3`` or ``fig4`` on the two-mode model.

    All use ``Omega_1 = Omega_2 = 1``, ``Delta = 0.05`` and mean phases
    ``(0, pi/2)``. Floquet index 1 is the lower dressed branch.
    """
    params = JCParams.from_detuning(0.05, omega)
    sys = params.system()
    decomp = floquet_decompose(sys, params.phases)
    floquet = floquet_superposition(decomp, (1.0, 0.0))
    mixed = floquet_superposition(decomp, FIG2_COEFFICIENTS)
    balanced = floquet_superposition(decomp, (1.0, 1.0))
    if name == "fig2":
        var = tuple(variances or (1e4,))
        states = {"superposition": mixed}
        t_end, n_t = 200.0, 201
    elif name == "fig3":
        var = tuple(variances or (1e2, 1e3, 1e4))
        states = {"floquet": floquet}
        t_end, n_t = 200.0, 201
    elif name == "fig4":
        var = tuple(variances or (1e4,))
        states = {"floquet": floquet, "balanced": balanced, "superposition": mixed}
        t_end, n_t = 200.0, 201
    else:
        raise SpecificationError(f"unknown preset {name!r}; choose fig2, fig3 or fig4")
    t_end = float(tmax if tmax is not None else t_end)
    n_t = int(tpoints if tpoints is not None else n_t)
    if t_end <= 0 or n_t < 2:
        raise SpecificationError("tmax must be > 0 and tpoints >= 2")
    state = GaussianPhotonState.diagonal([var[0], var[0]], mean_phases=params.phases)
    return Preset(name, params, sys, state, states, np.linspace(0.0, t_end, n_t), var, decomp,
                  {"coefficients": FIG2_COEFFICIENTS})
