"""Class decomposition of packets and the Dirac-phase-dressed free evolution."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .errors import ClassMismatch, ConfigError, SupportViolation
from .geometry import HOLE, LineClassification, MagnetAssembly, classify_lines, region_mask, unit
from .potential import (COMPACTIFIED, PotentialField, full_line_integral, gauge_lambda_points,
                        upstream_phase)
from .quantum import GridSpec, WaveField, free_evolve, norm

HIT_TOL = 1e-6
DROP_TOL = 1e-14


def _grid_points(grid: GridSpec, shift) -> np.ndarray:
    return grid.points() + np.asarray(shift, dtype=float)


def line_classes(points, vhat, magnet: MagnetAssembly):
    """Classify the lines along vhat through many points, sharing work between collinear points.

    Returns ``(hit, sig)`` as classify_lines does.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    u = unit(vhat)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool), np.zeros((0, len(magnet.tori)), dtype=np.int64)
    trans = pts - np.outer(pts @ u, u)
    keys = np.round(trans, 10)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    hit, sig = classify_lines(uniq, u, magnet)
    return hit[inv], sig[inv]


@dataclass
class PacketDecomposition:
    parent: WaveField
    vhat: np.ndarray
    components: list = dc_field(default_factory=list)
    hit_mass: float = 0.0

    @property
    def classes(self) -> list:
        return [c for c, _ in self.components]

    def component(self, cls: LineClassification) -> WaveField:
        for c, f in self.components:
            if c == cls:
                return f
        raise ClassMismatch(f"no component of class {cls.label()}")

    def masses(self) -> dict:
        return {c.label(): norm(f) ** 2 for c, f in self.components}


def decompose(phi0: WaveField, vhat, magnet: MagnetAssembly, shift=(0.0, 0.0, 0.0),
              hit_tol: float = HIT_TOL, drop_tol: float = DROP_TOL) -> PacketDecomposition:
    """Split phi0 by the class of the line along vhat through each grid point.

    ``shift`` is the lab position of the grid origin offset (for envelope fields
    the grid points sit at y + shift).  Mass on lines meeting the magnet is
    discarded and must stay below ``hit_tol`` of the total.
    """
    u = unit(vhat)
    grid = phi0.grid
    dens = np.abs(phi0.data.reshape(-1)) ** 2
    support = np.flatnonzero(dens > 0)
    pts = _grid_points(grid, shift)[support]
    hit, sig = line_classes(pts, u, magnet)
    total = float(dens.sum() * grid.cell_volume)
    hit_mass = float(dens[support[hit]].sum() * grid.cell_volume)
    if total > 0 and hit_mass > hit_tol * total:
        raise SupportViolation(f"{hit_mass / total:.3e} of the mass lies on lines meeting the magnet")
    comps = []
    keep = ~hit
    if np.any(keep):
        uniq, inv = np.unique(sig[keep], axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        idx = support[keep]
        for k, s in enumerate(uniq):
            sel = idx[inv == k]
            data = np.zeros(grid.size, dtype=np.complex128)
            data[sel] = phi0.data.reshape(-1)[sel]
            f = WaveField(grid, data.reshape(grid.shape))
            if norm(f) ** 2 < drop_tol:
                continue
            s = tuple(int(v) for v in s)
            cls = LineClassification.hole(s) if any(s) else LineClassification.out(len(s))
            comps.append((cls, f))
    # holes first, in signature order, then the out class
    comps.sort(key=lambda cf: (cf[0].kind != HOLE, cf[0].signature))
    return PacketDecomposition(phi0, u, comps, hit_mass)


def dirac_phase(cls: LineClassification, field: PotentialField, grid: GridSpec, vhat,
                shift=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Mask of the class domain times exp(i lambda), sampled at grid points + shift."""
    if field.gauge != COMPACTIFIED:
        raise ConfigError("the Dirac factor is built in the compactified gauge")
    u = unit(vhat)
    pts = _grid_points(grid, shift)
    mask = region_mask(pts, cls, u, field.magnet)
    out = np.zeros(grid.size, dtype=np.complex128)
    if np.any(mask):
        lam = gauge_lambda_points(field, cls, pts[mask], u)
        out[mask] = np.exp(1j * lam)
    return out.reshape(grid.shape)


def ab_component(phi_h: WaveField, t: float, cls: LineClassification, field: PotentialField,
                 velocity, frame: str = "envelope", mass: float = 1.0) -> WaveField:
    """Free-evolve one class component to time t and dress it with its Dirac factor.

    In the envelope frame the grid follows the packet, so the factor is taken at
    lab positions y + v t.  In the lab frame phi_h carries its own carrier wave.
    """
    v = np.asarray(velocity, dtype=float)
    shift = v * t if frame == "envelope" else np.zeros(3)
    free = free_evolve(phi_h, t, mass)
    return WaveField(phi_h.grid, free.data * dirac_phase(cls, field, phi_h.grid, unit(v), shift))


@dataclass
class AnsatzBundle:
    t: float
    components: dict
    total: WaveField


def ab_total(decomp: PacketDecomposition, t: float, field: PotentialField, velocity,
             frame: str = "envelope", mass: float = 1.0) -> AnsatzBundle:
    grid = decomp.parent.grid
    parts = {}
    total = np.zeros(grid.shape, dtype=np.complex128)
    for cls, f in decomp.components:
        c = ab_component(f, t, cls, field, velocity, frame, mass)
        parts[cls.label()] = c
        total += c.data
    return AnsatzBundle(t, parts, WaveField(grid, total))


# ---------------------------------------------------------------- transition-region solutions

def _phase_field(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.exp(1j * values).reshape(grid.shape)


def incoming_phase(field: PotentialField, grid: GridSpec, vhat, shift=(0.0, 0.0, 0.0)) -> np.ndarray:
    """exp(-i L(-inf)) at grid points + shift: the phase picked up on the way in."""
    return _phase_field(upstream_phase(field, _grid_points(grid, shift), vhat), grid)


def crossing_phase(field: PotentialField, grid: GridSpec, vhat, shift=(0.0, 0.0, 0.0)) -> np.ndarray:
    """exp(i x integral of vhat.A over the whole line) at grid points + shift."""
    return _phase_field(full_line_integral(field, _grid_points(grid, shift), vhat), grid)


def approx_solution(variant: str, Z: float, z: float, phi: WaveField, field: PotentialField,
                    velocity, frame: str = "envelope", mass: float = 1.0) -> WaveField:
    """Leading-order solution at z = |v| t for a packet phi prepared at t = 0.

    Up to z = Z the incoming phase multiplies free evolution.  Past Z,
    ``psi_371`` freezes the incoming phase at Z and evolves freely afterwards,
    while ``phi_372`` applies the whole-line phase before a single free flight.
    """
    if variant not in ("psi_371", "phi_372"):
        raise ConfigError(f"unknown variant {variant!r}")
    if Z < 0:
        raise ConfigError("Z must be non-negative")
    v = np.asarray(velocity, dtype=float)
    speed = float(np.linalg.norm(v))
    u = unit(v)
    grid = phi.grid

    def at(zz):
        # lab shift of the grid at position z along the path
        return u * zz if frame == "envelope" else np.zeros(3)

    if z <= Z:
        return WaveField(grid, incoming_phase(field, grid, u, at(z)) * free_evolve(phi, z / speed, mass).data)
    if variant == "psi_371":
        mid = free_evolve(phi, Z / speed, mass)
        mid = WaveField(grid, incoming_phase(field, grid, u, at(Z)) * mid.data)
        return free_evolve(mid, (z - Z) / speed, mass)
    dressed = WaveField(grid, crossing_phase(field, grid, u, at(0.0)) * phi.data)
    return free_evolve(dressed, z / speed, mass)


def leading_order(z: float, phi: WaveField, field: PotentialField, velocity, frame: str = "envelope",
                  mass: float = 1.0, Z: Optional[float] = None) -> WaveField:
    """Incoming expression: phase at the current position times free evolution, for any z."""
    return approx_solution("psi_371", np.inf if Z is None else Z, z, phi, field, velocity, frame, mass)
