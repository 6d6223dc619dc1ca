"""Experiments: Ansatz error against velocity, transition-region comparison, fringe shifts."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .ansatz import ab_total, approx_solution, decompose, leading_order
from .config import SimConfig
from .errors import ConfigError, FarPastGuard, FitUnderdetermined, GridMismatch, LowContrast
from .geometry import unit
from .potential import COMPACTIFIED
from .quantum import (GridSpec, MovingFrameHamiltonian, WaveField, far_past_mass, free_evolve,
                      make_gaussian, moving_frame_evolve, norm)


# ---------------------------------------------------------------- error curves

@dataclass
class ScanRow:
    v: float
    sup_error: float
    samples: list  # (z, t, error)
    far_past_mass: float = 0.0
    matvecs: int = 0
    seconds: float = 0.0


@dataclass
class ErrorCurve:
    rows: list
    slope: float = float("nan")
    intercept: float = float("nan")

    @property
    def velocities(self) -> np.ndarray:
        return np.array([r.v for r in self.rows])

    @property
    def sup_errors(self) -> np.ndarray:
        return np.array([r.sup_error for r in self.rows])

    @property
    def delta_equivalent(self) -> float:
        return 1 + self.slope

    def table(self) -> list:
        return [(r.v, z, t, e) for r in self.rows for z, t, e in r.samples]


def fit_slope(v: Sequence[float], err: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and intercept of log(err) against log(v)."""
    v = np.asarray(v, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(v) < 3:
        raise FitUnderdetermined(f"a slope fit needs at least 3 velocities, got {len(v)}")
    if np.any(err <= 0) or np.any(v <= 0):
        raise FitUnderdetermined("errors and velocities must be positive for a log-log fit")
    slope, intercept = np.polyfit(np.log(v), np.log(err), 1)
    return float(slope), float(intercept)


def initial_envelope(config: SimConfig, speed: float, grid: Optional[GridSpec] = None) -> WaveField:
    """Normalized sum of the configured packets, carrier removed, at t = 0."""
    grid = grid or config.grid
    data = np.zeros(grid.shape, dtype=np.complex128)
    for spec in config.packet_specs(speed):
        data += make_gaussian(spec, grid, frame="envelope").data
    f = WaveField(grid, data)
    return f * (1 / norm(f))


def _z_start(config: SimConfig) -> float:
    return -3 * config.magnet.enclosing_radius if config.z_start is None else config.z_start


def _sample_z(config: SimConfig) -> list:
    R = config.magnet.enclosing_radius
    zs = config.z_samples or list(np.linspace(-3 * R, 3 * R, 7))
    z0 = _z_start(config)
    return sorted(z for z in zs if z >= z0)


def exact_run(config: SimConfig, speed: float, u0: WaveField, z_values: Sequence[float],
              fluxes=None, on_step: Optional[Callable] = None):
    """Evolve the envelope from the far-past start through the samples; returns (snapshots, info)."""
    if config.gauge != COMPACTIFIED:
        raise ConfigError("exact runs use the compactified gauge")
    fld = config.potential(fluxes)
    u = unit(config.direction)
    vel = speed * u
    z0 = _z_start(config)
    t0 = z0 / speed
    start = free_evolve(u0, t0)
    sigma = min(float(np.min(p.sigmas)) for p in config.packets)
    mass = far_past_mass(start, config.magnet, 2 * sigma, shift=vel * t0)
    if mass >= config.propagator.far_past_tol:
        raise FarPastGuard(f"mass {mass:.3e} within 2 sigma of the magnet at z = {z0}")
    ts = [z / speed for z in z_values]
    factory = MovingFrameHamiltonian(u0.grid, fld, vel, config.propagator)
    _, snaps, matvecs = moving_frame_evolve(start, t0, max(ts), factory, config.propagator,
                                            snapshot_times=ts, on_step=on_step)
    return snaps, {"far_past_mass": mass, "matvecs": matvecs, "field": fld}


def scan_velocity(config: SimConfig, speed: float, fluxes=None) -> ScanRow:
    """One row of the scan: exact run against the Ansatz at every sampled z."""
    clock = time.perf_counter()
    u0 = initial_envelope(config, speed)
    vel = speed * unit(config.direction)
    dec = decompose(u0, vel, config.magnet)
    zs = _sample_z(config)
    snaps, info = exact_run(config, speed, u0, zs, fluxes)
    samples = []
    for z, s in zip(zs, snaps):
        ab = ab_total(dec, s.t, info["field"], vel).total
        samples.append((float(z), float(s.t), norm(s.field - ab)))
    sup = max(e for _, _, e in samples)
    return ScanRow(float(speed), sup, samples, info["far_past_mass"], info["matvecs"],
                   time.perf_counter() - clock)


def run_error_scan(config: SimConfig, fluxes=None, progress: Optional[Callable] = None) -> ErrorCurve:
    if len(config.velocities) < 3:
        raise FitUnderdetermined("the scan needs at least 3 velocities")
    rows = []
    for v in config.velocities:
        rows.append(scan_velocity(config, v, fluxes))
        if progress is not None:
            progress(rows[-1])
    slope, intercept = fit_slope([r.v for r in rows], [r.sup_error for r in rows])
    return ErrorCurve(rows, slope, intercept)


# ---------------------------------------------------------------- transition region

@dataclass
class TransitionRecord:
    v: float
    Z: float
    L: float
    z: list
    in_vs_371: list
    in_vs_372: list
    d371_vs_372: list

    @property
    def maxima(self) -> dict:
        return {"in_vs_371": max(self.in_vs_371), "in_vs_372": max(self.in_vs_372),
                "371_vs_372": max(self.d371_vs_372)}

    @property
    def max_difference(self) -> float:
        return max(self.maxima.values())


def transition_compare(config: SimConfig, Z: float, L: float, v: float, n: int = 5) -> TransitionRecord:
    """Pairwise differences of the three leading-order expressions over z in [Z/L, Z L]."""
    if not L > 1:
        raise ConfigError("L must exceed 1")
    if Z < 0:
        raise ConfigError("Z must be non-negative")
    fld = config.potential()
    vel = v * unit(config.direction)
    u0 = initial_envelope(config, v)
    zs = list(np.linspace(Z / L, Z * L, n))
    a, b, c = [], [], []
    for z in zs:
        e_in = leading_order(z, u0, fld, vel)
        e1 = approx_solution("psi_371", Z, z, u0, fld, vel)
        e2 = approx_solution("phi_372", Z, z, u0, fld, vel)
        a.append(norm(e_in - e1))
        b.append(norm(e_in - e2))
        c.append(norm(e1 - e2))
    return TransitionRecord(float(v), float(Z), float(L), zs, a, b, c)


# ---------------------------------------------------------------- fringes

@dataclass
class FringeResult:
    shift: float
    visibility: float
    frequency: float


def _profile(psi: WaveField, plane: float, axis, normal) -> tuple[np.ndarray, np.ndarray]:
    """Intensity on the grid plane nearest ``plane`` along ``normal``, projected onto ``axis``."""
    g = psi.grid
    n = unit(normal)
    k = int(np.argmax(np.abs(n)))
    if not np.isclose(abs(n[k]), 1.0):
        raise ConfigError("the observation plane must be a grid plane")
    ax = g.axes()
    i = int(np.argmin(np.abs(ax[k] - plane)))
    sl = [slice(None)] * 3
    sl[k] = i
    dens = np.abs(psi.data[tuple(sl)]) ** 2
    s = unit(axis)
    others = [j for j in range(3) if j != k]
    keep = 0 if abs(s[others[0]]) > abs(s[others[1]]) else 1
    j = others[keep]
    if not np.isclose(abs(s[j]), 1.0):
        raise ConfigError("the separation axis must be a grid axis in the plane")
    prof = dens.sum(axis=1 - keep)
    coord = ax[j]
    if s[j] < 0:
        prof, coord = prof[::-1], -coord[::-1]
    return coord, prof


def _far_profile(psi: WaveField, axis) -> tuple[np.ndarray, np.ndarray]:
    """Transverse momentum distribution along ``axis``: the pattern on a distant screen."""
    s = unit(axis)
    j = int(np.argmax(np.abs(s)))
    if not np.isclose(abs(s[j]), 1.0):
        raise ConfigError("the separation axis must be a grid axis")
    P = np.abs(sfft.fftn(psi.data)) ** 2
    prof = sfft.fftshift(P.sum(axis=tuple(i for i in range(3) if i != j)))
    k = sfft.fftshift(psi.grid.wavenumbers()[j])
    if s[j] < 0:
        prof, k = prof[::-1], -k[::-1]
    return k, prof


def _analytic_band(prof: np.ndarray, d: float, band: Optional[tuple]) -> tuple:
    """Background (low-pass) and positive-frequency fringe band of a 1D profile."""
    n = len(prof)
    F = sfft.fft(prof)
    k = 2 * np.pi * sfft.fftfreq(n, d)
    if band is None:
        # k^2 weighting suppresses the smooth envelope, leaving the fringe peak
        mag = np.abs(F) * (k > 0) * k * k
        ipk = int(np.argmax(mag))
        kpk = k[ipk]
        # a fringe peak stands above the envelope spectrum at the band edge
        if kpk <= 0 or np.abs(F[ipk]) <= np.abs(F[int(np.argmin(np.abs(k - 0.5 * kpk)))]):
            raise LowContrast("no fringe peak separated from the envelope")
        band = (0.5 * kpk, 1.5 * kpk)
    lo, hi = band
    # Hann taper: the band edges carry the tails of the envelope term
    taper = np.cos(np.pi * (k - 0.5 * (lo + hi)) / (hi - lo)) ** 2
    Zf = np.where((k >= lo) & (k <= hi), 2 * F * taper, 0)
    Bf = np.where(np.abs(k) < lo, F, 0)
    return sfft.ifft(Bf).real, sfft.ifft(Zf), band


def extract_fringe_shift(psi: WaveField, plane: float, ref: WaveField, axis=(1, 0, 0),
                         normal=(0, 0, 1), min_visibility: float = 0.05,
                         screen: str = "plane") -> FringeResult:
    """Phase displacement of the fringes of psi relative to ref, in (-pi, pi].

    With ``screen="plane"`` the intensity on the grid plane nearest ``plane``
    is summed over the coordinate orthogonal to ``axis``.  With
    ``screen="far"`` the pattern is the transverse momentum distribution,
    which is what a distant screen records once the evolution is free; then
    ``plane`` and ``normal`` are unused.  The positive-frequency band around
    the reference fringe frequency gives an analytic signal whose phase
    difference is averaged with intensity weights.  With ``axis`` pointing from
    the flux-carrying path to the other path, the result is the extra phase
    picked up along the first.
    """
    if psi.grid != ref.grid:
        raise GridMismatch("field and reference live on different grids")
    if screen == "plane":
        coord, p = _profile(psi, plane, axis, normal)
        _, pr = _profile(ref, plane, axis, normal)
    elif screen == "far":
        coord, p = _far_profile(psi, axis)
        _, pr = _far_profile(ref, axis)
    else:
        raise ConfigError(f"unknown screen {screen!r}")
    d = float(coord[1] - coord[0])
    p = p / p.sum()
    pr = pr / pr.sum()
    Br, Zr, band = _analytic_band(pr, d, None)
    B, Zs, _ = _analytic_band(p, d, band)
    vis = float(np.sum(np.abs(Zs)) / np.sum(np.abs(B)))
    vis_ref = float(np.sum(np.abs(Zr)) / np.sum(np.abs(Br)))
    if min(vis, vis_ref) < min_visibility:
        raise LowContrast(f"fringe visibility {min(vis, vis_ref):.3f} below {min_visibility}")
    # the fringe term behaves as exp(i(k s + theta)) with theta the extra phase of psi
    theta = float(np.angle(np.sum(Zs * np.conj(Zr))))
    if theta <= -np.pi:
        theta += 2 * np.pi
    return FringeResult(theta, vis, 0.5 * (band[0] + band[1]))


@dataclass
class FringeRun:
    flux: float
    shift: float
    visibility: float
    ansatz_shift: float


def fringe_experiment(config: SimConfig, speed: float, fluxes_list: Sequence, plane: float,
                      axis=(1, 0, 0), exact: bool = True, screen: str = "far") -> list:
    """Fringe shifts for each flux assignment, against the zero-flux run.

    The field is taken at time plane / speed, when the packet centre reaches
    the plane.  On the "plane" screen the envelope slice through its centre is
    the lab plane; on the "far" screen the field evolves freely from there on
    and its transverse momentum distribution is the recorded pattern.
    """
    if plane <= config.magnet.enclosing_radius:
        raise ConfigError("the observation plane must lie downstream of the enclosing ball")
    vel = speed * unit(config.direction)
    u0 = initial_envelope(config, speed)
    dec = decompose(u0, vel, config.magnet)
    t = plane / speed
    normal = unit(config.direction)
    zero = [0.0] * len(config.fluxes)
    ref_ab = ab_total(dec, t, config.potential(zero), vel).total
    ref_exact = exact_run(config, speed, u0, [plane], zero)[0][-1].field if exact else None
    out = []
    for fl in fluxes_list:
        fl = list(np.atleast_1d(fl).astype(float))
        ab = ab_total(dec, t, config.potential(fl), vel).total
        a = extract_fringe_shift(ab, 0.0, ref_ab, axis, normal, screen=screen)
        if exact:
            psi = exact_run(config, speed, u0, [plane], fl)[0][-1].field
            e = extract_fringe_shift(psi, 0.0, ref_exact, axis, normal, screen=screen)
            out.append(FringeRun(fl[0], e.shift, e.visibility, a.shift))
        else:
            out.append(FringeRun(fl[0], a.shift, a.visibility, a.shift))
    return out
