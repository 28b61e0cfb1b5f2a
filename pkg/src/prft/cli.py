"""Command-line driver: configuration, figure runs and CSV export.

Configuration files are flat INI text with one section per module::

    [model]
    preset = fig2            ; or: system = path/to/system.ini
    state = superposition
    [propagator]
    tolerance = 1e-10
    [counting]
    grid = 2048
    variants = prft, pfo, aprft
    quadrature_tol = 1e-8
    [statistics]
    fd_step = 1e-3
    max_order = 4
    [run]
    sigma2 = 100, 1000, 10000
    tmax = 200
    tpoints = 201
    threads = 1

Command-line flags override file values. Unknown sections or keys are
errors. System files describe a general driven system::

    [matter]
    dim = 2
    hamiltonian = re im re im ...     ; row-major complex entries
    frame = re im ...                 ; optional frame generator
    state = re im re im               ; initial matter state
    [mode.1]
    frequency = 20
    amplitude = 1
    phase = 0
    coupling = re im ...
    [photons]
    means = 1000, 1000                ; optional
    variance = 100, 0, 0, 100         ; photon-number covariance, row-major
    phases = 0, 1.5707963267948966    ; optional, default mode phases
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import os
import re
import sys as _sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import scipy.linalg

from . import __version__
from .counting import CountingGrid, Variant, evaluate_table, mgf_function, mgf_prft
from .decoherence import (coherence_matrix, kraus_operators, observable_expectation,
                          reduced_density_semiclassical)
from .errors import PRFTError, SpecificationError
from .jaynescummings import figure_presets, floquet_superposition
from .model import (SIGMA_X, SIGMA_Y, SIGMA_Z, DriveMode, DrivenSystem, GaussianPhotonState,
                    as_state)
from .propagator import floquet_decompose, propagate, unitarity_defect
from .statistics import (cumulants_fd, cumulants_from_moments, distribution_fft, error_scaling_fit,
                         gaussian_distribution, late_window, leading_coefficient_fit,
                         moments_from_cumulants)

SCHEMA_VERSION = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_SCHEMA = {
    "model": {"preset", "system", "state"},
    "propagator": {"tolerance"},
    "counting": {"grid", "variants", "quadrature_tol"},
    "statistics": {"fd_step", "max_order"},
    "run": {"sigma2", "tmax", "tpoints", "threads", "out"},
}


class ConfigError(SpecificationError):
    """Invalid configuration; ``line`` is the offending line of the file, if any."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)


@dataclass
class RunConfig:
    """Validated run settings."""

    preset: str | None = "fig2"
    system: str | None = None
    state: str | None = None
    tolerance: float = 1e-10
    grid: int = 2048
    variants: tuple = ("prft", "pfo", "aprft")
    quadrature_tol: float = 1e-8
    fd_step: float = 1e-3
    max_order: int = 4
    sigma2: tuple = ()
    tmax: float | None = None
    tpoints: int | None = None
    threads: int = 1
    out: str = "."

    def validate(self):
        for name in ("tolerance", "quadrature_tol", "fd_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.grid < 2 or self.grid & (self.grid - 1):
            raise ConfigError(f"grid must be a power of two >= 2, got {self.grid}")
        if self.fd_step > np.pi / 8:
            raise ConfigError("fd_step must not exceed pi/8")
        if not 1 <= self.max_order <= 6:
            raise ConfigError("max_order must lie in 1..6")
        if any(v <= 0 for v in self.sigma2):
            raise ConfigError("sigma2 values must be positive")
        if self.tmax is not None and self.tmax <= 0:
            raise ConfigError("tmax must be positive")
        if self.tpoints is not None and self.tpoints < 2:
            raise ConfigError("tpoints must be >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for v in self.variants:
            try:
                Variant(v)
            except ValueError:
                raise ConfigError(f"unknown variant {v!r}") from None
        if (self.preset is None) == (self.system is None):
            raise ConfigError("give exactly one of preset or system")
        return self

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self) | {"out": None}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- parsing

def _key_lines(path):
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    lines, section = {}, None
    for i, raw in enumerate(Path(path).read_text().splitlines(), 1):
        s = raw.split(";")[0].split("#")[0].strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            lines.setdefault((section, None), i)
        elif "=" in s and section is not None:
            lines.setdefault((section, s.split("=")[0].strip().lower()), i)
    return lines


def _read_ini(path):
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), default_section="__none__")
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read file ({exc.strerror})", path) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], path, line) from None
    return cp, _key_lines(path)


def _floats(text, path=None, line=None, what="value"):
    try:
        return [float(x) for x in re.split(r"[,\s]+", text.strip()) if x]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}", path, line) from None


def _complex_matrix(text, dim, path, line, what):
    vals = _floats(text, path, line, what)
    if len(vals) != 2 * dim * dim:
        raise ConfigError(f"{what}: expected {2 * dim * dim} numbers (re/im pairs), got {len(vals)}",
                          path, line)
    a = np.asarray(vals).reshape(dim * dim, 2)
    return (a[:, 0] + 1j * a[:, 1]).reshape(dim, dim)


def load_config(path) -> dict:
    """Parse a run configuration file into ``RunConfig`` keyword arguments."""
    cp, lines = _read_ini(path)
    out = {}
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", path, lines.get((sec, None)))
        for key, val in cp.items(sec):
            line = lines.get((sec, key))
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", path, line)
            try:
                out[key] = _convert(key, val)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}", path, line) from None
    if "system" in out:
        sys_path = Path(out["system"])
        if not sys_path.is_absolute():
            out["system"] = str(Path(path).parent / sys_path)
        out.setdefault("preset", None)
    return out


def _convert(key, val):
    val = val.strip()
    if key in ("tolerance", "quadrature_tol", "fd_step", "tmax"):
        return float(val)
    if key in ("grid", "max_order", "tpoints", "threads"):
        return int(val)
    if key == "sigma2":
        return tuple(float(x) for x in re.split(r"[,\s]+", val) if x)
    if key == "variants":
        return tuple(x.lower() for x in re.split(r"[,\s]+", val) if x)
    return val


def load_system(path):
    """Parse a system file; returns ``(DrivenSystem, GaussianPhotonState, matter_state)``."""
    cp, lines = _read_ini(path)
    allowed = {"matter": {"dim", "hamiltonian", "frame", "state"},
               "photons": {"means", "variance", "phases"}}
    mode_secs = []
    for sec in cp.sections():
        m = re.fullmatch(r"mode\.(\d+)", sec)
        keys = {"frequency", "amplitude", "phase", "coupling"} if m else allowed.get(sec)
        if keys is None:
            raise ConfigError(f"unknown section [{sec}]", path, lines.get((sec, None)))
        for key in cp[sec]:
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", path, lines.get((sec, key)))
        if m:
            mode_secs.append((int(m.group(1)), sec))
    for sec, keys in (("matter", ("dim", "hamiltonian", "state")), ("photons", ("variance",))):
        if sec not in cp:
            raise ConfigError(f"missing section [{sec}]", path)
        for key in keys:
            if key not in cp[sec]:
                raise ConfigError(f"missing key {key!r} in [{sec}]", path, lines.get((sec, None)))
    if not mode_secs:
        raise ConfigError("no [mode.N] sections", path)
    mode_secs.sort()
    if [k for k, _ in mode_secs] != list(range(1, len(mode_secs) + 1)):
        raise ConfigError("modes must be numbered 1..N without gaps", path)
    mat = cp["matter"]
    try:
        dim = int(mat["dim"])
    except ValueError:
        raise ConfigError("dim must be an integer", path, lines.get(("matter", "dim"))) from None

    def loc(sec, key):
        return lines.get((sec, key))

    try:
        h = _complex_matrix(mat["hamiltonian"], dim, path, loc("matter", "hamiltonian"), "hamiltonian")
        frame = (_complex_matrix(mat["frame"], dim, path, loc("matter", "frame"), "frame")
                 if "frame" in mat else None)
        sv = _floats(mat["state"], path, loc("matter", "state"), "state")
        if len(sv) != 2 * dim:
            raise ConfigError(f"state: expected {2 * dim} numbers", path, loc("matter", "state"))
        psi = as_state(np.asarray(sv[0::2]) + 1j * np.asarray(sv[1::2]), dim)
        modes = []
        for _, sec in mode_secs:
            s = cp[sec]
            for key in ("frequency", "amplitude", "phase", "coupling"):
                if key not in s:
                    raise ConfigError(f"missing key {key!r} in [{sec}]", path, loc(sec, None))
            v = _complex_matrix(s["coupling"], dim, path, loc(sec, "coupling"), "coupling")
            modes.append(DriveMode(float(s["frequency"]), float(s["amplitude"]), float(s["phase"]), v))
        system = DrivenSystem(h, tuple(modes), frame)
        ph = cp["photons"]
        n = len(modes)
        var = np.asarray(_floats(ph["variance"], path, loc("photons", "variance"), "variance"))
        if var.size != n * n:
            raise ConfigError(f"variance: expected {n * n} numbers", path, loc("photons", "variance"))
        var = var.reshape(n, n)
        if np.max(np.abs(var - var.T)) > 0 or np.min(np.linalg.eigvalsh(var)) <= 0:
            raise ConfigError("variance must be symmetric positive definite", path,
                              loc("photons", "variance"))
        means = (_floats(ph["means"], path, loc("photons", "means"), "means") if "means" in ph
                 else np.zeros(n))
        phases = (_floats(ph["phases"], path, loc("photons", "phases"), "phases") if "phases" in ph
                  else system.phases)
        state = GaussianPhotonState(means, np.real(scipy.linalg.sqrtm(var)), phases)
    except ConfigError:
        raise
    except (SpecificationError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None
    return system, state, psi


# ---------------------------------------------------------------- setup

@dataclass
class Setup:
    """Resolved physics for a run."""

    name: str
    system: DrivenSystem
    state: GaussianPhotonState
    matter_states: dict
    times: np.ndarray
    variances: tuple
    decomposition: object
    extra: dict = field(default_factory=dict)

    @property
    def matter_state(self):
        return next(iter(self.matter_states.values()))

    def photon_state(self, variance) -> GaussianPhotonState:
        return GaussianPhotonState.diagonal([variance] * self.system.n_modes,
                                            self.state.mean_photons, self.state.mean_phases)


def build_setup(cfg: RunConfig) -> Setup:
    if cfg.preset is not None:
        p = figure_presets(cfg.preset, tmax=cfg.tmax, tpoints=cfg.tpoints,
                           variances=cfg.sigma2 or None)
        states = p.matter_states
        if cfg.state is not None:
            states = _pick_state(states, cfg.state, p.decomposition)
        return Setup(p.name, p.system, p.state, states, p.times, p.variances, p.decomposition, p.extra)
    system, state, psi = load_system(cfg.system)
    decomp = floquet_decompose(system, state.mean_phases)
    times = np.linspace(0.0, cfg.tmax or 100.0, cfg.tpoints or 101)
    var = cfg.sigma2 or (float(state.variance[0, 0]),)
    states = {"initial": psi}
    if cfg.state is not None:
        states = _pick_state(states, cfg.state, decomp)
    return Setup(Path(cfg.system).stem, system, state, states, times, tuple(var), decomp)


def _pick_state(states, name, decomp):
    if name in states:
        return {name: states[name]}
    m = re.fullmatch(r"floquet(\d+)", name)
    if m and 1 <= int(m.group(1)) <= decomp.modes.shape[-1]:
        c = np.zeros(decomp.modes.shape[-1])
        c[int(m.group(1)) - 1] = 1.0
        return {name: floquet_superposition(decomp, c)}
    raise ConfigError(f"unknown matter state {name!r}; available: {', '.join(states)} or floquetN")


# ---------------------------------------------------------------- output

class Writer:
    """Writes CSVs with a ``#`` header and a manifest of everything produced."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg.out)
        self.files = []
        self.start = time.perf_counter()

    @property
    def header(self):
        return [f"schema_version: {SCHEMA_VERSION}", f"config_hash: {self.cfg.digest()}",
                f"command: {self.command}"]

    def path(self, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return self.dir / name

    def rows(self, name, columns, rows):
        with open(self.path(name), "w", newline="") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            fh.write(",".join(columns) + "\n")
            for r in rows:
                fh.write(",".join(_fmt(x) for x in r) + "\n")

    def manifest(self, extra=None):
        data = {
            "command": self.command,
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.cfg.digest(),
            "config": dataclasses.asdict(self.cfg),
            "tolerances": {"integrator": self.cfg.tolerance, "quadrature": self.cfg.quadrature_tol,
                           "fd_step": self.cfg.fd_step},
            "versions": {"prft": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": _sys.version.split()[0]},
            "outputs": {f: hashlib.sha256((self.dir / f).read_bytes()).hexdigest() for f in self.files},
            "wall_time_s": round(time.perf_counter() - self.start, 3),
        }
        if extra:
            data["results"] = extra
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "manifest.json").write_text(json.dumps(data, indent=2, default=_json) + "\n")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    return str(x)


def _json(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return str(x)


def _pool_map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- pipelines

def _cumulants(setup, cfg, variant, psi, state=None, times=None):
    times = setup.times if times is None else times
    fn = mgf_function(variant, setup.system, state or setup.state, psi, times,
                      integrator_tol=cfg.tolerance, quadrature_tol=cfg.quadrature_tol, dynamical=True)
    return cumulants_fd(fn, 1, setup.system.n_modes, times, cfg.max_order, cfg.fd_step, variant=variant)


def _cumulant_rows(series, label=""):
    for i, t in enumerate(series.times):
        for l in series.orders:
            yield [t, int(l), series.values[l - 1, i], series.variant] + ([label] if label else [])


def _error_rows(report):
    for s, var in enumerate(report.variances):
        for l in range(report.errors.shape[1]):
            for i, t in enumerate(report.times):
                yield [var, l + 1, t, report.errors[s, l, i]]


def _error_report(setup, cfg, psi):
    times = setup.times[setup.times > 0]
    var = setup.variances if len(setup.variances) >= 3 else (1e2, 1e3, 1e4)
    return error_scaling_fit(setup.system, setup.state.mean_phases, psi, var, times, cfg.max_order,
                             h=cfg.fd_step, quadrature_tol=cfg.quadrature_tol)


def _fit_rows(report):
    for s, var in enumerate(report.variances):
        for l in range(report.errors.shape[1]):
            yield [var, l + 1, report.time_exponents[s, l], report.sigma_exponents[l],
                   report.coefficients[s, l], report.residuals[s, l]]


def distribution_rows(setup, cfg, psi, times, variants=("exact", "total")):
    """Mode-1 photon distributions from the FFT of the MGF at each time."""
    grid = CountingGrid((cfg.grid,) + (1,) * (setup.system.n_modes - 1))
    ref = np.rint(setup.state.mean_photons)
    rows = []
    for v in variants:
        fn = mgf_function(v, setup.system, setup.state, psi, times, integrator_tol=cfg.tolerance,
                          quadrature_tol=cfg.quadrature_tol)
        table = evaluate_table(v, fn, grid, times)
        for i, t in enumerate(times):
            d = distribution_fft(table, i, reference=ref)
            for n, p in zip(d.offsets[0], d.probabilities):
                if p > 1e-14:
                    rows.append([t, int(n + d.reference[0]), p, v])
    return rows


def sigma_rows(setup, psi, times, label):
    """Semiclassical Pauli expectations with Gaussian and lattice coherence integrals."""
    dec = setup.decomposition.with_state(psi)
    init = gaussian_distribution(setup.state)
    rows = []
    for t in times:
        for kind, coh in (("gaussian", coherence_matrix(dec, t, variance=setup.state.variance)),
                          ("lattice", coherence_matrix(dec, t, initial=init))):
            rho = reduced_density_semiclassical(dec, coh, t, setup.system)
            env = abs(coh[0, 1]) if coh.shape[0] > 1 else 1.0
            rows.append([t, label, kind, observable_expectation(rho, SIGMA_X),
                         observable_expectation(rho, SIGMA_Y), observable_expectation(rho, SIGMA_Z),
                         env])
    return rows


FIT_COLUMNS = ["l", "variant", "leading", "subleading", "relative_difference", "max_deviation",
               "relative_residual", "agree"]
SIGMA_COLUMNS = ["t", "state", "coherence", "sigma_x", "sigma_y", "sigma_z", "envelope"]


def compare_variants(setup, cfg, psi, variants):
    """Cumulants of several variants on one time grid plus leading-coefficient fits."""
    variants = [Variant(v).value for v in variants]
    if len(set(variants)) < 2:
        raise ConfigError("compare-variants needs at least two distinct variants")
    series = {v: _cumulants(setup, cfg, v, psi) for v in variants}
    times = setup.times
    window = late_window(times)
    rows = []
    for i, t in enumerate(times):
        for l in range(1, cfg.max_order + 1):
            rows.append([t, l] + [series[v].values[l - 1, i] for v in variants])
    ref = variants[0]
    fits, flags = [], {}
    for l in range(1, cfg.max_order + 1):
        base = series[ref].values[l - 1]
        lead_ref, _ = leading_coefficient_fit(times, base, l, window)
        scale = max(float(np.max(np.abs(base[window]))), 1e-300)
        for v in variants:
            vals = series[v].values[l - 1]
            lead, sub = leading_coefficient_fit(times, vals, l, window)
            rel = abs(lead - lead_ref) / max(abs(lead_ref), 1e-300)
            dev = float(np.max(np.abs(vals - base)))
            ok = dev <= 1e-6 if l <= 2 else rel <= 0.05
            fits.append([l, v, lead, sub, rel, dev, float(np.max(np.abs(vals - base)[window])) / scale, ok])
            flags[f"kappa{l}_{v}"] = bool(ok)
    return variants, rows, fits, flags


def _validate(setup, cfg):
    """Invariant checks; returns ``[(name, value, bound, ok)]``."""
    sys_ = setup.system
    checks = []
    phi = setup.state.mean_phases
    t = setup.times[setup.times > 0][:5]
    u = propagate(sys_, phi, t, tol=cfg.tolerance)
    checks.append(("unitarity_defect", unitarity_defect(u), 1e-9))
    for name, psi in setup.matter_states.items():
        m0 = mgf_prft(sys_, phi, psi, np.zeros((1, sys_.n_modes)), t)
        checks.append((f"mgf_zero_{name}", float(np.max(np.abs(m0 - 1))), 1e-10))
        small = GaussianPhotonState.diagonal([25.0] * sys_.n_modes, setup.state.mean_photons, phi)
        grid = CountingGrid((256,) + (1,) * (sys_.n_modes - 1))
        fn = mgf_function("total", sys_, small, psi, t[-1:], integrator_tol=cfg.tolerance)
        table = evaluate_table("total", fn, grid, t[-1:])
        checks.append((f"table_mgf_zero_{name}", table.normalization_defect(), 1e-10))
        d = distribution_fft(table, 0)
        checks.append((f"normalization_{name}", d.normalization_defect, 1e-9))
        rho = np.outer(psi, np.conj(psi))
        ks = kraus_operators(sys_, small, float(t[-1]), tol=cfg.tolerance)
        checks.append((f"kraus_completeness_{name}", ks.completeness_defect(), 1e-8))
        p = ks.distribution(rho)
        checks.append((f"kraus_min_probability_{name}", max(0.0, -float(p.probabilities.min())), 1e-9))
    dec = setup.decomposition
    coh = coherence_matrix(dec.with_state(setup.matter_state), float(t[-1]), variance=setup.state.variance)
    checks.append(("coherence_diagonal", float(np.max(np.abs(np.diag(coh) - 1))), 0.0))
    checks.append(("coherence_bound", max(0.0, float(np.max(np.abs(coh))) - 1), 0.0))
    from .propagator import finite_difference_gradient
    g_fd = finite_difference_gradient(sys_, dec)
    rel = float(np.max(np.abs(dec.gradients - g_fd)) / max(np.max(np.abs(g_fd)), 1e-300))
    checks.append(("gradient_hf_vs_fd", rel, 1e-6))
    kappa = np.array([3.0, 2.0, -0.5, 0.7])
    checks.append(("cumulant_round_trip",
                   float(np.max(np.abs(cumulants_from_moments(moments_from_cumulants(kappa)) - kappa))),
                   1e-12))
    return [(n, v, b, v <= b) for n, v, b in checks]


# ---------------------------------------------------------------- commands

def cmd_figure(cfg, w, which):
    setup = build_setup(dataclasses.replace(cfg, preset=which, system=None))
    results = {}
    if which == "fig2":
        name, psi = next(iter(setup.matter_states.items()))
        sig1 = float(setup.state.sigmas[0])
        times = np.array([0.5, 1.0, 2.0]) * sig1
        w.rows("fig2b_distribution.csv", ["t", "n", "p", "variant"],
               distribution_rows(setup, cfg, psi, times))
        w.rows("fig2c_sigma_y.csv", SIGMA_COLUMNS, sigma_rows(setup, psi, setup.times, name))
        rows = []
        for v in ("prft", "exact"):
            rows += _cumulant_rows(_cumulants(setup, cfg, v, psi))
        w.rows("fig2d_cumulants.csv", ["t", "l", "value", "variant"], rows)
        rep = _error_report(setup, cfg, psi)
        w.rows("fig2e_error.csv", ["sigma2", "l", "t", "error"], _error_rows(rep))
        results["sigma2_exponents"] = rep.sigma_exponents
    elif which == "fig3":
        psi = setup.matter_state
        prft = _cumulants(setup, cfg, "prft", psi)
        w.rows("fig3a_cumulants_prft.csv", ["t", "l", "value", "variant"], _cumulant_rows(prft))

        def one(var):
            return var, _cumulants(setup, cfg, "exact", psi, setup.photon_state(var))

        for var, s in _pool_map(one, setup.variances, cfg.threads):
            w.rows(f"fig3a_cumulants_sigma2_{var:g}.csv", ["t", "l", "value", "variant"], _cumulant_rows(s))
        rep = _error_report(setup, cfg, psi)
        w.rows("fig3b_error.csv", ["sigma2", "l", "t", "error"], _error_rows(rep))
        w.rows("fig3b_fit.csv", ["sigma2", "l", "time_exponent", "sigma2_exponent", "coefficient",
                                 "residual"], _fit_rows(rep))
        results["time_exponents"] = rep.time_exponents
    else:
        rows = []
        for name, psi in setup.matter_states.items():
            rows += sigma_rows(setup, psi, setup.times, name)
        w.rows("fig4b_sigma_y.csv", SIGMA_COLUMNS, rows)
        psi = setup.matter_states.get("superposition", setup.matter_state)
        variants, table, fits, flags = compare_variants(setup, cfg, psi, ("prft", "pfo", "aprft"))
        w.rows("fig4c_variants.csv", ["t", "l"] + variants, table)
        w.rows("fig4c_fits.csv", FIT_COLUMNS, fits)
        results["agreement"] = flags
    return results


def cmd_cumulants(cfg, w):
    setup = build_setup(cfg)
    name, psi = next(iter(setup.matter_states.items()))
    w.rows("cumulants_prft.csv", ["t", "l", "value", "variant"],
           _cumulant_rows(_cumulants(setup, cfg, "prft", psi)))

    def one(var):
        return var, _cumulants(setup, cfg, "exact", psi, setup.photon_state(var))

    for var, s in _pool_map(one, setup.variances, cfg.threads):
        w.rows(f"cumulants_sigma2_{var:g}.csv", ["t", "l", "value", "variant"], _cumulant_rows(s))
    if len(setup.variances) >= 3:
        rep = _error_report(setup, cfg, psi)
        w.rows("error.csv", ["sigma2", "l", "t", "error"], _error_rows(rep))
        w.rows("error_fit.csv", ["sigma2", "l", "time_exponent", "sigma2_exponent", "coefficient",
                                 "residual"], _fit_rows(rep))
        return {"time_exponents": rep.time_exponents, "sigma2_exponents": rep.sigma_exponents}
    return {}


def cmd_distribution(cfg, w):
    setup = build_setup(cfg)
    name, psi = next(iter(setup.matter_states.items()))
    variants = [v for v in cfg.variants if v in ("exact", "total", "initial")] or ["exact", "total"]
    w.rows("distribution.csv", ["t", "n", "p", "variant"],
           distribution_rows(setup, cfg, psi, setup.times[-1:], variants))
    return {}


def cmd_decoherence(cfg, w):
    setup = build_setup(cfg)
    rows = []
    for name, psi in setup.matter_states.items():
        rows += sigma_rows(setup, psi, setup.times, name)
    w.rows("decoherence.csv", SIGMA_COLUMNS, rows)
    return {}


def cmd_compare(cfg, w):
    setup = build_setup(cfg)
    psi = next(iter(setup.matter_states.values()))
    variants, table, fits, flags = compare_variants(setup, cfg, psi, cfg.variants)
    w.rows("variants.csv", ["t", "l"] + variants, table)
    w.rows("variants_fit.csv", FIT_COLUMNS, fits)
    return {"agreement": flags}


def cmd_validate(cfg, w):
    checks = _validate(build_setup(cfg), cfg)
    w.rows("validate.csv", ["check", "value", "bound", "pass"], checks)
    for n, v, b, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {n}: {v:.3e} (bound {b:g})")
    return {"passed": all(c[3] for c in checks)}


# ---------------------------------------------------------------- entry point

def build_parser():
    ap = argparse.ArgumentParser(prog="prft", description="Photon-resolved Floquet theory runs.")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=("fig2", "fig3", "fig4"))
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--out", help="output directory (default: $PRFT_OUT or .)")
    common.add_argument("--grid", type=int, help="counting-grid size per mode (power of two)")
    common.add_argument("--fd-step", type=float, help="finite-difference step in chi")
    common.add_argument("--sigma2", help="comma-separated photon-number variances")
    common.add_argument("--tmax", type=float)
    common.add_argument("--tpoints", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--variants", help="comma-separated MGF variants")
    fig = sub.add_parser("figure", parents=[common], help="reproduce one figure's data")
    fig.add_argument("which", choices=("fig2", "fig3", "fig4"))
    for name, text in (("cumulants", "cumulants and error scaling"),
                       ("distribution", "photon-number distributions"),
                       ("decoherence", "reduced matter observables"),
                       ("compare-variants", "cumulants across MGF variants"),
                       ("validate", "invariant checks")):
        sub.add_parser(name, parents=[common], help=text)
    return ap


def make_config(args) -> RunConfig:
    kw = load_config(args.config) if args.config else {}
    if args.preset:
        kw["preset"], kw["system"] = args.preset, None
    flags = {"grid": args.grid, "fd_step": args.fd_step, "tmax": args.tmax, "tpoints": args.tpoints,
             "threads": args.threads}
    kw.update({k: v for k, v in flags.items() if v is not None})
    if args.sigma2:
        try:
            kw["sigma2"] = _convert("sigma2", args.sigma2)
        except ValueError:
            raise ConfigError(f"--sigma2: expected numbers, got {args.sigma2!r}") from None
    if args.variants:
        kw["variants"] = _convert("variants", args.variants)
    kw["out"] = args.out or kw.get("out") or os.environ.get("PRFT_OUT") or "."
    return RunConfig(**kw).validate()


COMMANDS = {"cumulants": cmd_cumulants, "distribution": cmd_distribution, "decoherence": cmd_decoherence,
            "compare-variants": cmd_compare, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
        label = f"figure {args.which}" if args.command == "figure" else args.command
        w = Writer(cfg, label)
        if args.command == "figure":
            results = cmd_figure(cfg, w, args.which)
        else:
            results = COMMANDS[args.command](cfg, w)
        w.manifest(results)
    except SpecificationError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_VALIDATION
    except (PRFTError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL
    if results.get("passed") is False:
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
