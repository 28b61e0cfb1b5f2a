"""Cumulants, moments, photon-number distributions and error-scaling fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage

from .counting import MGFTable, Variant
from .errors import AliasingError, LatticeError, PRFTError, SpecificationError
from .model import GaussianPhotonState
from .propagator import FloquetDecomposition

NEGATIVITY_TOL = 1e-9


# ---------------------------------------------------------------- cumulants

@dataclass(frozen=True, eq=False)
class CumulantSeries:
    """Cumulants ``values[l-1, i]`` of mode ``k`` (1-based) at ``times[i]``."""

    mode: int
    times: np.ndarray
    values: np.ndarray
    variant: str = ""
    step: float = float("nan")
    includes_initial: bool = False

    @property
    def orders(self) -> np.ndarray:
        return np.arange(1, self.values.shape[0] + 1)

    def order(self, l: int) -> np.ndarray:
        return self.values[l - 1]

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["t", "l", "value", "variant"])
            for i, t in enumerate(self.times):
                for l in self.orders:
                    w.writerow([repr(float(t)), int(l), repr(float(self.values[l - 1, i])), self.variant])


def fd_weights(offsets, order: int) -> np.ndarray:
    """Weights ``w`` with ``sum_j w_j f(s_j h) ~ h^order f^(order)(0)``."""
    s = np.asarray(offsets, dtype=float)
    vander = np.vander(s, increasing=True).T
    rhs = np.zeros(len(s))
    rhs[order] = math.factorial(order)
    return np.linalg.solve(vander, rhs)


def unwrapped_log(values, center: int) -> np.ndarray:
    """Complex log along axis 0 with the phase continued outward from ``center``."""
    values = np.asarray(values)
    if np.min(np.abs(values)) < 1e-12:
        raise PRFTError("|M| < 1e-12 on the stencil: log singular, use a smaller step")
    phase = np.angle(values)
    right = np.unwrap(phase[center:], axis=0)
    left = np.unwrap(phase[center::-1], axis=0)[::-1]
    return np.log(np.abs(values)) + 1j * np.concatenate([left[:-1], right], axis=0)


def _stencil_derivatives(mgf, n_modes, k, h, half_width, max_order):
    """K derivatives at 0 along mode k from a (4J+1)-point half-step grid with Richardson."""
    j = np.arange(-2 * half_width, 2 * half_width + 1)
    pts = np.zeros((len(j), n_modes))
    pts[:, k] = 0.5 * h * j
    vals = np.asarray(mgf(pts))
    vals = vals.reshape(len(j), -1)
    logk = unwrapped_log(vals, 2 * half_width)
    coarse_idx = np.arange(0, len(j), 2)
    fine_idx = np.arange(half_width, 3 * half_width + 1)
    stencil = np.arange(-half_width, half_width + 1)
    out = np.empty((max_order,) + vals.shape[1:], dtype=complex)
    for l in range(1, max_order + 1):
        w = fd_weights(stencil, l)
        d_h = np.tensordot(w, logk[coarse_idx], axes=1) / h ** l
        d_h2 = np.tensordot(w, logk[fine_idx], axes=1) / (0.5 * h) ** l
        p = 2 * half_width + 2 - 2 * math.ceil(l / 2)
        out[l - 1] = (2 ** p * d_h2 - d_h) / (2 ** p - 1)
    return out


def cumulants_fd(mgf, k: int, n_modes: int, times, max_order: int = 4, h: float = 1e-3,
                 half_width: int = 3, variant: str = "", initial: GaussianPhotonState | None = None,
                 auto_step: bool = True) -> CumulantSeries:
    """Cumulants of mode ``k`` (1-based) by finite differences of ``log M``.

    Parameters
    ----------
    mgf : callable
        ``chi (P, N_D) -> M (P, T)`` at fixed ``times``.
    h : float
        Base step; Richardson extrapolation uses ``h`` and ``h/2``. With
        ``auto_step`` the step shrinks to ``0.05/scale`` when the mean drift
        or spread (estimated from a probe) makes ``h`` too coarse.
    initial : GaussianPhotonState, optional
        When given, the Gaussian initial cumulants are added so the result is
        the total (dynamical plus initial) series.
    """
    if not 0 < h <= np.pi / 8:
        raise SpecificationError(f"finite-difference step must lie in (0, pi/8], got {h}")
    if not 1 <= k <= n_modes:
        raise SpecificationError(f"mode index {k} outside 1..{n_modes}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if auto_step:
        d = _stencil_derivatives(mgf, n_modes, k - 1, h, 1, 2)
        scale = max(np.max(np.abs(d[0])), np.sqrt(np.max(np.abs(d[1]))), 1e-300)
        h = min(h, 0.05 / scale)
    der = _stencil_derivatives(mgf, n_modes, k - 1, h, half_width, max_order)
    kappa = np.real((1j ** np.arange(1, max_order + 1))[:, None] * der.reshape(max_order, -1))
    if initial is not None:
        kappa = kappa.copy()
        kappa[0] += initial.mean_photons[k - 1]
        if max_order > 1:
            kappa[1] += initial.variance[k - 1, k - 1]
    return CumulantSeries(k, times, kappa, str(getattr(variant, "value", variant)), h, initial is not None)


def initial_cumulants(state: GaussianPhotonState, k: int, max_order: int = 4) -> np.ndarray:
    out = np.zeros(max_order)
    out[0] = state.mean_photons[k - 1]
    if max_order > 1:
        out[1] = state.variance[k - 1, k - 1]
    return out


def cross_covariance_fd(mgf, k: int, l: int, n_modes: int, h: float = 1e-3) -> np.ndarray:
    """Cross-mode covariance ``-d^2 K / dchi_k dchi_l`` at 0."""
    pts = np.zeros((5, n_modes))
    for i, (a, b) in enumerate([(0, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)]):
        pts[i, k - 1] += a * h
        pts[i, l - 1] += b * h
    vals = np.log(np.asarray(mgf(pts)).reshape(5, -1))
    return -np.real((vals[1] - vals[2] - vals[3] + vals[4]) / (4 * h * h))


def moments_from_cumulants(kappa) -> np.ndarray:
    """Raw moments ``m_1..m_L`` (L <= 4) from cumulants along axis 0."""
    k = np.asarray(kappa, dtype=float)
    if not 1 <= k.shape[0] <= 4:
        raise SpecificationError("moment/cumulant conversion supports orders 1..4")
    m = np.empty_like(k)
    m[0] = k[0]
    if k.shape[0] > 1:
        m[1] = k[1] + k[0] ** 2
    if k.shape[0] > 2:
        m[2] = k[2] + 3 * k[1] * k[0] + k[0] ** 3
    if k.shape[0] > 3:
        m[3] = k[3] + 4 * k[2] * k[0] + 3 * k[1] ** 2 + 6 * k[1] * k[0] ** 2 + k[0] ** 4
    return m


def cumulants_from_moments(moments) -> np.ndarray:
    """Inverse of :func:`moments_from_cumulants`."""
    m = np.asarray(moments, dtype=float)
    if not 1 <= m.shape[0] <= 4:
        raise SpecificationError("moment/cumulant conversion supports orders 1..4")
    k = np.empty_like(m)
    k[0] = m[0]
    if m.shape[0] > 1:
        k[1] = m[1] - m[0] ** 2
    if m.shape[0] > 2:
        k[2] = m[2] - 3 * m[1] * m[0] + 2 * m[0] ** 3
    if m.shape[0] > 3:
        k[3] = m[3] - 4 * m[2] * m[0] - 3 * m[1] ** 2 + 12 * m[1] * m[0] ** 2 - 6 * m[0] ** 4
    return k


# ---------------------------------------------------------------- distributions

@dataclass(frozen=True, eq=False)
class PhotonDistribution:
    """Probabilities on a photon-number lattice.

    ``probabilities`` has one axis per mode; ``offsets[k]`` are the integer
    offsets of axis ``k`` relative to ``reference`` (the rounded mean).
    """

    offsets: tuple
    probabilities: np.ndarray
    reference: np.ndarray
    time: float = 0.0
    normalization_defect: float = 0.0

    @property
    def n_modes(self) -> int:
        return self.probabilities.ndim

    def marginal(self, k: int) -> "PhotonDistribution":
        """Distribution of mode ``k`` (1-based)."""
        axes = tuple(i for i in range(self.n_modes) if i != k - 1)
        p = self.probabilities.sum(axis=axes) if axes else self.probabilities
        return PhotonDistribution((self.offsets[k - 1],), p, self.reference[k - 1:k], self.time,
                                  self.normalization_defect)

    def moments(self, k: int = 1, max_order: int = 4) -> np.ndarray:
        """Raw moments of the absolute photon number of mode ``k``."""
        marg = self.marginal(k)
        n = marg.offsets[0] + marg.reference[0]
        return np.array([np.sum(marg.probabilities * n ** l) for l in range(1, max_order + 1)])

    def cumulants(self, k: int = 1, max_order: int = 4) -> np.ndarray:
        """Cumulants from central moments (stable for large means)."""
        marg = self.marginal(k)
        n = marg.offsets[0].astype(float)
        mean = np.sum(marg.probabilities * n)
        central = np.array([np.sum(marg.probabilities * (n - mean) ** l) for l in range(1, max_order + 1)])
        central[0] = 0.0
        kap = cumulants_from_moments(central)
        kap[0] = mean + marg.reference[0]
        return kap

    def total_variation(self, other: "PhotonDistribution") -> float:
        """``0.5 sum |p - q|`` after aligning both lattices."""
        a, b = _align(self, other)
        return 0.5 * float(np.sum(np.abs(a - b)))

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow([f"n_{k + 1}" for k in range(self.n_modes)] + ["p", "t"])
            mesh = np.meshgrid(*[o + r for o, r in zip(self.offsets, self.reference)], indexing="ij")
            flat = [m.reshape(-1) for m in mesh]
            for idx, p in enumerate(self.probabilities.reshape(-1)):
                w.writerow([int(f[idx]) for f in flat] + [repr(float(p)), repr(float(self.time))])


def _align(p: PhotonDistribution, q: PhotonDistribution):
    if p.n_modes != q.n_modes:
        raise SpecificationError("distributions have different mode counts")
    lo, hi, slices_p, slices_q = [], [], [], []
    for k in range(p.n_modes):
        ap = p.offsets[k] + int(p.reference[k])
        aq = q.offsets[k] + int(q.reference[k])
        lo.append(min(ap[0], aq[0]))
        hi.append(max(ap[-1], aq[-1]))
    shape = tuple(h - l + 1 for l, h in zip(lo, hi))
    a, b = np.zeros(shape), np.zeros(shape)
    ia = tuple(slice(int(p.offsets[k][0] + p.reference[k] - lo[k]),
                     int(p.offsets[k][-1] + p.reference[k] - lo[k]) + 1) for k in range(p.n_modes))
    ib = tuple(slice(int(q.offsets[k][0] + q.reference[k] - lo[k]),
                     int(q.offsets[k][-1] + q.reference[k] - lo[k]) + 1) for k in range(q.n_modes))
    a[ia] = p.probabilities
    b[ib] = q.probabilities
    return a, b


def _finalize(p, offsets, reference, time, check=True):
    total = float(p.sum())
    defect = abs(total - 1.0)
    if check and defect > 1e-9:
        raise AliasingError(f"distribution normalization defect {defect:.3e}")
    if check and np.min(p) < -NEGATIVITY_TOL:
        raise AliasingError(f"negative probability {np.min(p):.3e} beyond tolerance")
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    return PhotonDistribution(tuple(offsets), p, np.asarray(reference, dtype=float), time, defect)


def distribution_fft(table: MGFTable, time_index: int = 0, reference=None,
                     support_sigmas: float = 8.0) -> PhotonDistribution:
    """Invert an MGF sampled on a full counting grid.

    Modes with grid size 1 are marginalized. ``reference`` (integer vector,
    default 0) is the lattice origin; offsets are centered on it.
    """
    grid = table.grid
    if grid is None:
        raise SpecificationError("distribution_fft needs a table evaluated on a CountingGrid")
    ref = np.zeros(grid.n_modes) if reference is None else np.rint(np.asarray(reference, dtype=float))
    axes = grid.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    m = table.on_grid(time_index) * np.exp(1j * sum(c * r for c, r in zip(mesh, ref)))
    active = [k for k, g in enumerate(grid.sizes) if g > 1]
    # Nyquist check from the two smallest nonzero counting fields per active mode
    for k in active:
        g = grid.sizes[k]
        d = 2 * np.pi / g
        idx_p = [0] * grid.n_modes
        idx_m = [0] * grid.n_modes
        idx_p[k], idx_m[k] = 1, g - 1
        kp, km, k0 = np.log(m[tuple(idx_p)]), np.log(m[tuple(idx_m)]), np.log(m[(0,) * grid.n_modes])
        mean = -(kp.imag - km.imag) / (2 * d)
        var = max(0.0, -(kp.real + km.real - 2 * k0.real) / d ** 2)
        if abs(mean) + support_sigmas * math.sqrt(var) > g / 2:
            raise AliasingError(f"mode {k + 1}: estimated support {abs(mean) + support_sigmas * math.sqrt(var):.1f} "
                                f"exceeds half the grid ({g // 2}); increase the grid size")
    if not active:
        raise SpecificationError("at least one counting-grid axis must have size > 1")
    p = np.fft.ifftn(m, axes=active).real.reshape(tuple(grid.sizes[k] for k in active))
    p = np.fft.fftshift(p)
    offsets = [np.fft.fftshift(np.fft.fftfreq(grid.sizes[k]) * grid.sizes[k]).astype(int) for k in active]
    return _finalize(p, offsets, ref[active], float(table.times[time_index]))


def gaussian_distribution(state: GaussianPhotonState, half_width=None) -> PhotonDistribution:
    """Lattice distribution ``|a_n|^2`` of a Gaussian photon state, normalized on the window."""
    sig = state.sigmas
    hw = [int(math.ceil(10 * s)) if half_width is None else int(half_width) for s in sig]
    ref = np.rint(state.mean_photons)
    offsets = [np.arange(-h, h + 1) for h in hw]
    mesh = np.meshgrid(*offsets, indexing="ij")
    n = np.stack([m + r for m, r in zip(mesh, ref)], axis=-1)
    p = np.abs(state.amplitudes(n)) ** 2
    return _finalize(p / p.sum(), offsets, ref, 0.0)


def semiclassical_distribution(decomp: FloquetDecomposition, initial: PhotonDistribution, t: float,
                               modes=None) -> PhotonDistribution:
    """Shift-and-mix ``sum_mu |c_mu|^2 p_{n - t grad E_mu}(0)`` with multilinear interpolation.

    ``modes`` selects which drive modes the lattice axes correspond to
    (default: all, in order).
    """
    if decomp.gradients is None or decomp.coefficients is None:
        raise SpecificationError("decomposition needs gradients and coefficients")
    modes = list(range(initial.n_modes)) if modes is None else [m - 1 for m in modes]
    p0 = initial.probabilities
    out = np.zeros_like(p0)
    for mu, w in enumerate(decomp.populations):
        shift = t * decomp.gradients[mu, modes]
        if np.any(np.abs(shift) > np.array(p0.shape) / 2):
            raise LatticeError(f"Floquet drift {shift} exceeds the lattice window")
        out += w * scipy.ndimage.shift(p0, shift, order=1, mode="constant", cval=0.0, prefilter=False)
    return _finalize(out, initial.offsets, initial.reference, float(t), check=False)


def scaled_distribution(dist: PhotonDistribution, sigma: float, k: int = 1):
    """Scaled coordinates ``(n_tilde, sigma p)`` of mode ``k`` relative to the reference."""
    marg = dist.marginal(k)
    return marg.offsets[0] / sigma, sigma * marg.probabilities


def scaled_total_variation(p: PhotonDistribution, q: PhotonDistribution, sigma: float, k: int = 1,
                           n_grid=None) -> float:
    """Total variation between scaled densities ``sigma p(sigma n_tilde)`` on a common grid."""
    xp, yp = scaled_distribution(p, sigma, k)
    xq, yq = scaled_distribution(q, sigma, k)
    grid = np.linspace(-8, 8, 1601) if n_grid is None else n_grid
    fp = np.interp(grid, xp, yp, left=0, right=0)
    fq = np.interp(grid, xq, yq, left=0, right=0)
    return 0.5 * float(np.trapezoid(np.abs(fp - fq), grid))


def local_maxima(p, min_height: float = 0.0) -> np.ndarray:
    """Indices of strict interior local maxima of a 1-D array above ``min_height``."""
    p = np.asarray(p)
    inner = (p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:]) & (p[1:-1] > min_height)
    return np.flatnonzero(inner) + 1


# ---------------------------------------------------------------- scaling fits

def power_law_fit(x, y):
    """Least-squares ``log y = a log x + b``; returns ``(exponent, prefactor, rms residual)``."""
    x, y = np.asarray(x, dtype=float), np.abs(np.asarray(y, dtype=float))
    mask = (x > 0) & (y > 0)
    if mask.sum() < 2:
        return float("nan"), float("nan"), float("inf")
    lx, ly = np.log(x[mask]), np.log(y[mask])
    a, b = np.polyfit(lx, ly, 1)
    res = ly - (a * lx + b)
    return float(a), float(np.exp(b)), float(np.sqrt(np.mean(res ** 2)))


def leading_coefficient_fit(times, values, order: int, window=None):
    """Fit ``kappa_l(t) / t^l = a + b / t`` over ``window``; returns ``(a, b)``.

    Two terms keep the fit well conditioned when ``kappa_l`` carries
    oscillating sub-leading pieces that a full degree-``l`` polynomial would
    absorb into its coefficients.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    window = late_window(times) if window is None else np.asarray(window, bool)
    t = times[window]
    if t.size < 3:
        raise SpecificationError("leading-coefficient fit needs at least three window points")
    basis = np.stack([np.ones_like(t), 1 / t], axis=1)
    (a, b), *_ = np.linalg.lstsq(basis, values[window] / t ** order, rcond=None)
    return float(a), float(b)


def late_window(times, decades: float = 1.0):
    """Mask of the last ``decades`` of positive times."""
    times = np.asarray(times, dtype=float)
    tmax = times.max()
    return (times >= tmax / 10 ** decades) & (times > 0)


@dataclass(frozen=True, eq=False)
class ErrorScalingReport:
    """Cumulant errors between the exact and PRFT variants.

    ``errors[s, l-1, i]`` is ``|kappa_l^EXACT - kappa_l^PRFT|`` for variance
    ``variances[s]`` at ``times[i]``.
    """

    variances: np.ndarray
    times: np.ndarray
    errors: np.ndarray
    time_exponents: np.ndarray
    sigma_exponents: np.ndarray
    coefficients: np.ndarray
    expansion: dict = field(default_factory=dict)
    residuals: np.ndarray | None = None
    conclusive: bool = True

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["sigma2", "l", "time_exponent", "sigma2_exponent", "coefficient"])
            for s, var in enumerate(self.variances):
                for l in range(self.errors.shape[1]):
                    w.writerow([repr(float(var)), l + 1, repr(float(self.time_exponents[s, l])),
                                repr(float(self.sigma_exponents[l])), repr(float(self.coefficients[s, l]))])


def error_scaling_fit(sys, phi_bar, matter_state, variances, times, max_order: int = 4, k: int = 1,
                      fit_window=None, h: float = 1e-3, residual_threshold: float = 0.1,
                      quadrature_tol: float = 1e-8) -> ErrorScalingReport:
    """Fit power laws of the exact-vs-PRFT cumulant error in time and variance.

    ``times`` should be positive; ``fit_window`` is a boolean mask over them
    (default: the last decade). The variance exponent is fitted at the last
    time. Coefficients are ``f_l = delta kappa_l sigma^2 / t^l`` averaged over
    the window.
    """
    from .counting import mgf_exact_gaussian, mgf_prft

    variances = np.asarray(variances, dtype=float)
    if len(variances) < 3 or variances.max() / variances.min() < 100 * (1 - 1e-12):
        raise SpecificationError("need >= 3 variances spanning >= 2 decades")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    window = late_window(times) if fit_window is None else np.asarray(fit_window, bool)
    prft = cumulants_fd(lambda c: mgf_prft(sys, phi_bar, matter_state, c, times), k, sys.n_modes,
                        times, max_order, h, variant=Variant.PRFT)
    errors = np.empty((len(variances), max_order, len(times)))
    for s, var in enumerate(variances):
        state = GaussianPhotonState.diagonal([var] * sys.n_modes, mean_phases=phi_bar)
        fn = lambda c, st=state: mgf_exact_gaussian(sys, st, matter_state, c, times, tol=quadrature_tol,
                                                    dynamical=True)
        exact = cumulants_fd(fn, k, sys.n_modes, times, max_order, h, variant=Variant.EXACT)
        errors[s] = np.abs(exact.values - prft.values)
    t_exp = np.empty((len(variances), max_order))
    coef = np.empty((len(variances), max_order))
    resid = np.empty((len(variances), max_order))
    for s, var in enumerate(variances):
        for l in range(max_order):
            t_exp[s, l], _, resid[s, l] = power_law_fit(times[window], errors[s, l, window])
            tw = times[window]
            coef[s, l] = float(np.mean(errors[s, l, window] * var / tw ** (l + 1)))
    s_exp = np.array([power_law_fit(variances, errors[:, l, -1])[0] for l in range(max_order)])
    expansion = {}
    tw = times[window]
    for l in range(max_order):
        expansion[l + 1] = np.polyfit(tw, prft.values[l, window], l + 1)[::-1]
    conclusive = bool(np.all(resid < residual_threshold))
    return ErrorScalingReport(variances, times, errors, t_exp, s_exp, coef, expansion, resid, conclusive)
