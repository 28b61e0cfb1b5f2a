"""Moment-generating functions of the photon-number distribution.

Every variant returns ``M(chi, t) = <exp(-i chi . n)>`` restricted to the
interaction-induced (dynamical) factor unless stated otherwise. Counting
fields ``chi`` have shape ``(..., N_D)``; times are scalars or 1-D arrays and
results have shape ``chi.shape[:-1] + times.shape``.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from .errors import IntegrationError, QuadratureError, SpecificationError
from .model import DrivenSystem, GaussianPhotonState, as_state
from .propagator import (FloquetDecomposition, PropagatorCache, dagger, default_steps,
                         effective_flux, effective_hamiltonian, is_static, propagate)

CHUNK = 8192


class Variant(str, enum.Enum):
    EXACT = "exact"
    PRFT = "prft"
    SEMICLASSICAL = "semiclassical"
    PFO = "pfo"
    APRFT = "aprft"
    INITIAL = "initial"
    TOTAL = "total"


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class CountingGrid:
    """Uniform counting-field grid over ``[-pi, pi)`` per mode.

    Samples follow FFT ordering (``chi = 0`` first). A size of 1 switches
    the mode off (``chi_k = 0`` only), which yields marginal distributions.
    """

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(g) for g in self.sizes)
        if not sizes or not all(_is_pow2(g) for g in sizes):
            raise SpecificationError(f"grid sizes must be powers of two, got {self.sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_modes(self) -> int:
        return len(self.sizes)

    @property
    def shape(self) -> tuple:
        return self.sizes

    def axes(self) -> list:
        return [2 * np.pi * np.fft.fftfreq(g) for g in self.sizes]

    def points(self) -> np.ndarray:
        """All grid points, shape ``(prod(sizes), N_D)`` in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def stencil_points(n_modes: int, k: int, h: float, half_width: int = 3) -> np.ndarray:
    """Points ``j h e_k`` for ``j = -J..J`` (derivative-only grids)."""
    pts = np.zeros((2 * half_width + 1, n_modes))
    pts[:, k] = h * np.arange(-half_width, half_width + 1)
    return pts


@dataclass(frozen=True, eq=False)
class MGFTable:
    """MGF samples ``values[i, p]`` at ``times[i]`` and ``chi[p]``."""

    variant: Variant
    times: np.ndarray
    chi: np.ndarray
    values: np.ndarray
    grid: CountingGrid | None = None

    def normalization_defect(self) -> float:
        zero = np.all(self.chi == 0, axis=-1)
        if not np.any(zero):
            raise SpecificationError("chi = 0 is not part of this table")
        return float(np.max(np.abs(self.values[:, zero] - 1)))

    def on_grid(self, i: int) -> np.ndarray:
        """Values at time index ``i`` reshaped to the counting-grid shape."""
        if self.grid is None:
            raise SpecificationError("table was not evaluated on a counting grid")
        return self.values[i].reshape(self.grid.shape)

    def to_csv(self, path, header_lines=()):
        n = self.chi.shape[1]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["t"] + [f"chi_{k + 1}" for k in range(n)] + ["re_M", "im_M", "variant"])
            for i, t in enumerate(self.times):
                for p in range(self.chi.shape[0]):
                    v = self.values[i, p]
                    w.writerow([repr(float(t))] + [repr(float(c)) for c in self.chi[p]]
                               + [repr(float(v.real)), repr(float(v.imag)), self.variant.value])


def _times(t):
    t = np.asarray(t, dtype=float)
    return t, np.atleast_1d(t).reshape(-1)


def _finish(values, chi_shape, t):
    """``values`` of shape (P, T) -> ``chi_shape + t.shape``."""
    return values.reshape(chi_shape + t.shape)


def _evolved_states(sys, phi, psi, times, tol, cache):
    """``U_phi(t) psi`` for a flat batch of phases, shape (B, T, dim)."""
    out = np.empty((phi.shape[0], len(times), sys.dim), dtype=complex)
    for s in range(0, phi.shape[0], CHUNK):
        block = phi[s:s + CHUNK]
        u = cache.get(block) if cache is not None else propagate(sys, block, times, tol=tol)
        out[s:s + CHUNK] = u @ psi
    return out


def pair_expectation(sys: DrivenSystem, psi, phi_left, phi_right, times, tol=1e-10, cache=None):
    """``<psi| U_left^dag(t) U_right(t) |psi>`` for flat batches of phase pairs, shape (B, T)."""
    phi_left = np.asarray(phi_left, dtype=float).reshape(-1, sys.n_modes)
    phi_right = np.asarray(phi_right, dtype=float).reshape(-1, sys.n_modes)
    if cache is not None and not np.array_equal(cache.times, times):
        raise SpecificationError("propagator cache was built for different times")
    left = _evolved_states(sys, phi_left, psi, times, tol, cache)
    right = _evolved_states(sys, phi_right, psi, times, tol, cache)
    return np.einsum("bti,bti->bt", np.conj(left), right)


def mgf_initial(state: GaussianPhotonState, chi) -> np.ndarray:
    """``exp(-i nbar . chi - chi Sigma^2 chi / 2)``."""
    chi = np.asarray(chi, dtype=float)
    quad = np.einsum("...i,ij,...j->...", chi, state.variance, chi)
    return np.exp(-1j * chi @ state.mean_photons - 0.5 * quad)


def mgf_prft(sys: DrivenSystem, phi_bar, matter_state, chi, t, tol: float = 1e-10,
             cache: PropagatorCache | None = None) -> np.ndarray:
    """Semiclassical-limit dynamical MGF ``<U^dag_{phi-chi/2} U_{phi+chi/2}>``."""
    chi = np.asarray(chi, dtype=float)
    phi_bar = sys.check_phases(phi_bar)
    t, times = _times(t)
    psi = as_state(matter_state, sys.dim)
    flat = chi.reshape(-1, sys.n_modes)
    vals = pair_expectation(sys, psi, phi_bar - flat / 2, phi_bar + flat / 2, times, tol, cache)
    return _finish(vals, chi.shape[:-1], t)


def mgf_aprft(sys: DrivenSystem, phi_bar, matter_state, chi, t, tol: float = 1e-10,
              cache: PropagatorCache | None = None) -> np.ndarray:
    """Symmetrized one-sided MGF ``(<U^dag_phi U_{phi+chi}> + <U^dag_{phi-chi} U_phi>) / 2``."""
    chi = np.asarray(chi, dtype=float)
    phi_bar = sys.check_phases(phi_bar)
    t, times = _times(t)
    psi = as_state(matter_state, sys.dim)
    flat = chi.reshape(-1, sys.n_modes)
    base = np.broadcast_to(phi_bar, flat.shape)
    fwd = pair_expectation(sys, psi, base, phi_bar + flat, times, tol, cache)
    bwd = pair_expectation(sys, psi, phi_bar - flat, base, times, tol, cache)
    return _finish(0.5 * (fwd + bwd), chi.shape[:-1], t)


def mgf_semiclassical_floquet(decomp: FloquetDecomposition, chi, t) -> np.ndarray:
    """``sum_mu |c_mu|^2 exp(-i t grad E_mu . chi)``."""
    if decomp.gradients is None or decomp.coefficients is None:
        raise SpecificationError("decomposition needs gradients and initial-state coefficients")
    chi = np.asarray(chi, dtype=float)
    t, times = _times(t)
    drift = chi.reshape(-1, chi.shape[-1]) @ decomp.gradients.T  # (P, dim)
    ph = np.exp(-1j * drift[:, None, :] * times[None, :, None])
    vals = ph @ decomp.populations
    return _finish(vals, chi.shape[:-1], t)


# ---------------------------------------------------------------- flux operator

def _geometric_weights(theta, m):
    """``sum_{r<m} exp(i r theta)`` computed stably."""
    half = 0.5 * theta
    s = np.sin(half)
    small = np.abs(s) < 1e-13
    ratio = np.where(small, m, np.sin(m * half) / np.where(small, 1.0, s))
    return np.exp(1j * (m - 1) * half) * ratio


def _trapezoid_richardson(sys, phi, k, s, n_per_period):
    """``int_0^s U^dag j_k U dt`` by trapezoid on ``2n`` and ``n`` panels plus Richardson."""
    if s == 0:
        return np.zeros((sys.dim, sys.dim), dtype=complex)
    n = max(2, 2 * int(np.ceil(n_per_period * s / sys.period / 2)))
    grid = np.linspace(0.0, s, n + 1)
    u = propagate(sys, phi, grid)
    f = dagger(u) @ effective_flux(sys, phi, grid, k) @ u
    fine = np.trapezoid(f, grid, axis=0)
    coarse = np.trapezoid(f[::2], grid[::2], axis=0)
    return (4 * fine - coarse) / 3


def integrated_flux(sys: DrivenSystem, phi_bar, t, n_per_period: int | None = None) -> np.ndarray:
    """Time-integrated Heisenberg flux operators ``J_k(t)``, shape ``(T, N_D, dim, dim)``.

    Static frame Hamiltonians are integrated exactly in the eigenbasis;
    periodic ones use trapezoid+Richardson within one period and closed-form
    geometric sums over whole periods.
    """
    phi_bar = sys.check_phases(phi_bar)
    times = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((len(times), sys.n_modes, sys.dim, sys.dim), dtype=complex)
    if is_static(sys):
        lam, v = np.linalg.eigh(effective_hamiltonian(sys, phi_bar, 0.0))
        gap = lam[:, None] - lam[None, :]
        for k in range(sys.n_modes):
            jb = dagger(v) @ effective_flux(sys, phi_bar, 0.0, k + 1) @ v
            for i, tt in enumerate(times):
                with np.errstate(invalid="ignore", divide="ignore"):
                    w = np.where(np.abs(gap) * max(tt, 1.0) < 1e-12, tt,
                                 (np.exp(1j * gap * tt) - 1) / (1j * np.where(gap == 0, 1.0, gap)))
                out[i, k] = v @ (jb * w) @ dagger(v)
    else:
        tau = sys.period
        n_per_period = n_per_period or 4 * default_steps(sys)
        mono = propagate(sys, phi_bar, [tau])[0]
        tri, z = scipy.linalg.schur(mono, output="complex")
        ang = np.angle(np.diag(tri))
        theta = ang[None, :] - ang[:, None]  # conj(lambda_a) lambda_b
        m = np.floor(times / tau).astype(np.int64)
        s = times - m * tau
        for k in range(sys.n_modes):
            j_tau = _trapezoid_richardson(sys, phi_bar, k + 1, tau, n_per_period)
            jz = dagger(z) @ j_tau @ z
            for i in range(len(times)):
                whole = z @ (jz * _geometric_weights(theta, m[i])) @ dagger(z)
                j_s = _trapezoid_richardson(sys, phi_bar, k + 1, s[i], n_per_period)
                pm = z @ np.diag(np.exp(1j * m[i] * ang)) @ dagger(z)
                out[i, k] = whole + dagger(pm) @ j_s @ pm
    defect = float(np.max(np.abs(out - dagger(out)))) if out.size else 0.0
    if defect > 1e-8:
        raise IntegrationError(f"integrated flux is not Hermitian (defect {defect:.3e})", defect)
    return 0.5 * (out + dagger(out))


def mgf_pfo(sys: DrivenSystem, phi_bar, matter_state, chi, t, flux=None) -> np.ndarray:
    """``<exp(-i sum_k chi_k J_k(t))>`` with the time-integrated photon flux."""
    chi = np.asarray(chi, dtype=float)
    t, times = _times(t)
    psi = as_state(matter_state, sys.dim)
    j = integrated_flux(sys, phi_bar, times) if flux is None else flux
    flat = chi.reshape(-1, sys.n_modes)
    vals = np.empty((flat.shape[0], len(times)), dtype=complex)
    for i in range(len(times)):
        gen = np.einsum("pk,kab->pab", flat, j[i])
        w, v = np.linalg.eigh(gen)
        amp = dagger(v) @ psi
        vals[:, i] = np.einsum("pa,pa->p", np.abs(amp) ** 2, np.exp(-1j * w))
    return _finish(vals, chi.shape[:-1], t)


# ---------------------------------------------------------------- exact Gaussian

MAX_QUADRATURE_ORDER = 640


def gauss_hermite_nodes(state: GaussianPhotonState, order: int, cutoff: float = 6 * np.sqrt(2)):
    """Phase nodes and normalized weights for the weight ``exp(-2 dphi Sigma^2 dphi)``.

    Nodes beyond ``cutoff`` in the standardized coordinate (6 phase widths)
    are dropped; weights are renormalized numerically.
    """
    x, w = scipy.special.roots_hermite(order)
    keep = np.abs(x) <= cutoff
    x, w = x[keep], w[keep]
    n = state.n_modes
    mesh = np.meshgrid(*([x] * n), indexing="ij")
    wmesh = np.meshgrid(*([w] * n), indexing="ij")
    xs = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    ws = np.prod(np.stack([m.reshape(-1) for m in wmesh], axis=-1), axis=-1)
    center, lmat = state.phase_weight_transform()
    return center + xs @ lmat.T, ws / ws.sum()


def dynamical_exact_gaussian(sys, state, psi, flat_chi, times, order, tol):
    nodes, weights = gauss_hermite_nodes(state, order)
    n_nodes = len(nodes)
    vals = np.zeros((flat_chi.shape[0], len(times)), dtype=complex)
    # chunk over chi so that pair batches stay bounded
    per = max(1, CHUNK // n_nodes)
    for s in range(0, flat_chi.shape[0], per):
        block = flat_chi[s:s + per]
        left = (nodes[None] - block[:, None] / 2).reshape(-1, sys.n_modes)
        right = (nodes[None] + block[:, None] / 2).reshape(-1, sys.n_modes)
        pe = pair_expectation(sys, psi, left, right, times, tol)
        vals[s:s + per] = np.einsum("pnt,n->pt", pe.reshape(len(block), n_nodes, -1), weights)
    return vals


def mgf_exact_gaussian(sys: DrivenSystem, state: GaussianPhotonState, matter_state, chi, t,
                       quadrature_order: int = 20, tol: float = 1e-8, dynamical: bool = False,
                       integrator_tol: float = 1e-10, return_order: bool = False):
    """MGF of the full light-matter state for a Gaussian photonic input.

    The phase integral of ``<U^dag_{phi-chi/2} U_{phi+chi/2}>`` against the
    normalized weight ``exp(-2 (phi-phibar) Sigma^2 (phi-phibar))`` is done by
    tensor Gauss-Hermite quadrature; the order doubles until successive
    results agree to ``tol``. The result is multiplied by ``mgf_initial``
    unless ``dynamical`` is set.
    """
    if state.n_modes != sys.n_modes:
        raise SpecificationError("photon state and system have different mode counts")
    chi = np.asarray(chi, dtype=float)
    t, times = _times(t)
    psi = as_state(matter_state, sys.dim)
    flat = chi.reshape(-1, sys.n_modes)
    order = quadrature_order
    prev = dynamical_exact_gaussian(sys, state, psi, flat, times, order, integrator_tol)
    residual = np.inf
    while order < MAX_QUADRATURE_ORDER:
        order *= 2
        cur = dynamical_exact_gaussian(sys, state, psi, flat, times, order, integrator_tol)
        residual = float(np.max(np.abs(cur - prev)))
        prev = cur
        if residual <= tol:
            break
    if not residual <= tol:
        raise QuadratureError(f"quadrature residual {residual:.3e} above {tol:g} at order {order}",
                              residual)
    vals = prev if dynamical else prev * mgf_initial(state, flat)[:, None]
    out = _finish(vals, chi.shape[:-1], t)
    return (out, order) if return_order else out


# ---------------------------------------------------------------- dispatch

def mgf_function(variant: Variant, sys: DrivenSystem, state: GaussianPhotonState | None,
                 matter_state, times, **kw):
    """Callable ``chi (P, N_D) -> M (P, T)`` for one variant at fixed times.

    EXACT, INITIAL and TOTAL include the initial factor; the other variants
    are dynamical only. TOTAL is PRFT times INITIAL.
    """
    variant = Variant(variant)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    phi_bar = None if state is None else state.mean_phases
    if variant in (Variant.EXACT, Variant.INITIAL, Variant.TOTAL) and state is None:
        raise SpecificationError(f"variant {variant.value} needs a photon state")
    if phi_bar is None:
        phi_bar = sys.phases
    tol = kw.get("integrator_tol", 1e-10)
    if variant is Variant.PRFT:
        return lambda chi: mgf_prft(sys, phi_bar, matter_state, chi, times, tol)
    if variant is Variant.APRFT:
        return lambda chi: mgf_aprft(sys, phi_bar, matter_state, chi, times, tol)
    if variant is Variant.PFO:
        flux = integrated_flux(sys, phi_bar, times)
        return lambda chi: mgf_pfo(sys, phi_bar, matter_state, chi, times, flux=flux)
    if variant is Variant.SEMICLASSICAL:
        from .propagator import floquet_decompose
        decomp = floquet_decompose(sys, phi_bar, matter_state)
        return lambda chi: mgf_semiclassical_floquet(decomp, chi, times)
    if variant is Variant.INITIAL:
        return lambda chi: np.repeat(mgf_initial(state, chi)[..., None], len(times), axis=-1)
    if variant is Variant.TOTAL:
        return lambda chi: (mgf_prft(sys, phi_bar, matter_state, chi, times, tol)
                            * mgf_initial(state, chi)[..., None])
    order = kw.get("quadrature_order", 20)
    qtol = kw.get("quadrature_tol", 1e-8)
    return lambda chi: mgf_exact_gaussian(sys, state, matter_state, chi, times, order, qtol,
                                          dynamical=kw.get("dynamical", False), integrator_tol=tol)


def evaluate_table(variant: Variant, fn, grid: CountingGrid, times) -> MGFTable:
    pts = grid.points()
    vals = np.asarray(fn(pts)).reshape(len(pts), -1).T
    return MGFTable(Variant(variant), np.atleast_1d(np.asarray(times, dtype=float)), pts, vals, grid)
