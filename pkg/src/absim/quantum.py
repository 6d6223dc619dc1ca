"""Wave fields on periodic grids and their propagation.

Units: hbar = m = 1 unless a mass is passed explicitly.  A field's ``data``
holds the amplitude at cell centers; discrete L2 quantities carry the cell
volume.  The momentum representation is normalized so that Parseval holds
with the momentum cell volume (2pi/L)^3.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy import sparse
from scipy.linalg import eigh_tridiagonal

from . import kernels
from .errors import (ConfigError, FarPastGuard, GridMismatch, KrylovStall, ResolutionGuard)
from .geometry import MagnetAssembly, unit
from .potential import COMPACTIFIED, PotentialField, edge_integrals, eval_A, eval_V, smoothstep

FD_COEFFS = {
    2: (-2.0, 1.0),
    4: (-5 / 2, 4 / 3, -1 / 12),
    6: (-49 / 18, 3 / 2, -3 / 20, 1 / 90),
    8: (-205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560),
}


def _fft_friendly(n: int) -> bool:
    for p in (2, 3, 5):
        while n % p == 0 and n > 1:
            n //= p
    return n == 1


# ---------------------------------------------------------------- grids and fields

@dataclass(frozen=True)
class GridSpec:
    shape: tuple
    extents: tuple
    origin: Optional[tuple] = None

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        ext = tuple(float(e) for e in self.extents)
        if len(shape) != 3 or len(ext) != 3:
            raise ConfigError("grids are three dimensional")
        if any(n < 4 or not _fft_friendly(n) for n in shape):
            raise ConfigError("points per axis must be products of 2, 3 and 5 (at least 4)")
        if any(not e > 0 for e in ext):
            raise ConfigError("extents must be positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "extents", ext)
        if self.origin is None:
            # cell-centred and symmetric about zero, so no node sits on a coordinate plane
            origin = tuple(-e / 2 + e / n / 2 for e, n in zip(ext, shape))
        else:
            origin = tuple(float(o) for o in self.origin)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def cube(cls, n: int, length: float) -> "GridSpec":
        return cls((n, n, n), (length, length, length))

    @property
    def spacing(self) -> np.ndarray:
        return np.array(self.extents) / np.array(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [o + d * np.arange(n) for o, d, n in zip(self.origin, self.spacing, self.shape)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij", sparse=True)

    def points(self) -> np.ndarray:
        X, Y, Z = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def wavenumbers(self) -> list[np.ndarray]:
        return [2 * np.pi * sfft.fftfreq(n, d) for n, d in zip(self.shape, self.spacing)]

    def k_squared(self) -> np.ndarray:
        kx, ky, kz = self.wavenumbers()
        return kx[:, None, None] ** 2 + ky[None, :, None] ** 2 + kz[None, None, :] ** 2

    @property
    def nyquist(self) -> np.ndarray:
        return np.pi / self.spacing

    def index_of(self, x) -> tuple:
        i = np.rint((np.asarray(x) - np.array(self.origin)) / self.spacing).astype(int)
        return tuple(int(v) % n for v, n in zip(i, self.shape))


@dataclass
class WaveField:
    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.shape != self.grid.shape:
            raise GridMismatch("array shape differs from grid shape")

    def copy(self) -> "WaveField":
        return WaveField(self.grid, self.data.copy())

    def _check(self, other: "WaveField"):
        if other.grid != self.grid:
            raise GridMismatch("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return WaveField(self.grid, self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return WaveField(self.grid, self.data - other.data)

    def __mul__(self, c):
        return WaveField(self.grid, self.data * c)

    __rmul__ = __mul__

    def momentum(self) -> np.ndarray:
        """Momentum amplitudes (phases referred to the grid origin)."""
        dv = self.grid.cell_volume
        return sfft.fftn(self.data) * (dv / (2 * np.pi) ** 1.5)

    @classmethod
    def from_momentum(cls, grid: GridSpec, amp: np.ndarray) -> "WaveField":
        dv = grid.cell_volume
        return cls(grid, sfft.ifftn(amp) * ((2 * np.pi) ** 1.5 / dv))

    def momentum_cell(self) -> float:
        return float(np.prod(2 * np.pi / np.array(self.grid.extents)))


def inner(a: WaveField, b: WaveField) -> complex:
    a._check(b)
    return complex(np.vdot(a.data, b.data) * a.grid.cell_volume)


def norm(a: WaveField) -> float:
    return float(np.sqrt(np.vdot(a.data, a.data).real * a.grid.cell_volume))


def momentum_norm(a: WaveField) -> float:
    m = a.momentum()
    return float(np.sqrt(np.vdot(m, m).real * a.momentum_cell()))


def expectation_position(a: WaveField) -> np.ndarray:
    rho = np.abs(a.data) ** 2
    total = rho.sum()
    ax = a.grid.axes()
    return np.array([np.tensordot(rho.sum(axis=tuple(j for j in range(3) if j != k)), ax[k], 1)
                     for k in range(3)]) / total


def expectation_momentum(a: WaveField) -> np.ndarray:
    rho = np.abs(sfft.fftn(a.data)) ** 2
    total = rho.sum()
    ks = a.grid.wavenumbers()
    return np.array([np.tensordot(rho.sum(axis=tuple(j for j in range(3) if j != k)), ks[k], 1)
                     for k in range(3)]) / total


def mass_where(a: WaveField, mask: np.ndarray) -> float:
    return float(np.sum(np.abs(a.data[mask]) ** 2) * a.grid.cell_volume)


# ---------------------------------------------------------------- packets

@dataclass(frozen=True)
class TransverseWindow:
    """Smooth cylindrical window about the packet axis: 1 inside ``inner``, 0 beyond ``outer``."""

    inner: float
    outer: float
    axis: Optional[tuple] = None

    def __post_init__(self):
        if not 0 <= self.inner < self.outer:
            raise ConfigError("window radii must satisfy 0 <= inner < outer")


@dataclass(frozen=True)
class PacketSpec:
    center: tuple
    sigma: object
    velocity: tuple = (0.0, 0.0, 0.0)
    truncate: Optional[float] = 6.0
    window: Optional[TransverseWindow] = None
    mass: float = 1.0

    @property
    def sigmas(self) -> np.ndarray:
        s = np.broadcast_to(np.asarray(self.sigma, dtype=float), (3,)).copy()
        if np.any(s <= 0):
            raise ConfigError("packet widths must be positive")
        return s

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))

    @property
    def direction(self) -> np.ndarray:
        if self.window is not None and self.window.axis is not None:
            return unit(self.window.axis)
        return unit(self.velocity) if self.speed > 0 else np.array([0.0, 0.0, 1.0])


def check_resolution(spec: PacketSpec, grid: GridSpec, envelope: bool = False) -> None:
    s = spec.sigmas
    if np.any(s <= 2 * grid.spacing):
        raise ResolutionGuard("packet width must exceed two grid spacings")
    need = 6 / s
    if not envelope:
        need = need + spec.mass * np.abs(np.asarray(spec.velocity, dtype=float))
    if np.any(grid.nyquist <= need):
        raise ResolutionGuard(f"Nyquist momentum {grid.nyquist} does not exceed {need}")


def packet_envelope(spec: PacketSpec, grid: GridSpec, shift=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Unnormalized real envelope at grid points displaced by ``shift``."""
    X, Y, Zc = grid.mesh()
    c = np.asarray(spec.center, dtype=float) - np.asarray(shift, dtype=float)
    s = spec.sigmas
    d = [X - c[0], Y - c[1], Zc - c[2]]
    q = (d[0] / s[0]) ** 2 + (d[1] / s[1]) ** 2 + (d[2] / s[2]) ** 2
    env = np.exp(-q / 4)
    if spec.truncate is not None:
        # smooth taper from (truncate - 1) sigma to truncate sigma
        r = np.sqrt(q)
        env = env * (1 - smoothstep(r - (spec.truncate - 1)))
    if spec.window is not None:
        u = spec.direction
        along = d[0] * u[0] + d[1] * u[1] + d[2] * u[2]
        rho = np.sqrt(np.maximum(q * 0 + d[0] ** 2 + d[1] ** 2 + d[2] ** 2 - along ** 2, 0.0))
        w = spec.window
        env = env * (1 - smoothstep((rho - w.inner) / (w.outer - w.inner)))
    return env


def make_gaussian(spec: PacketSpec, grid: GridSpec, frame: str = "lab") -> WaveField:
    """Normalized Gaussian packet; ``frame="envelope"`` omits the carrier exp(i m v.x)."""
    envelope = frame == "envelope"
    check_resolution(spec, grid, envelope)
    env = packet_envelope(spec, grid).astype(np.complex128)
    if not envelope:
        X, Y, Zc = grid.mesh()
        v = spec.mass * np.asarray(spec.velocity, dtype=float)
        env = env * np.exp(1j * (v[0] * X + v[1] * Y + v[2] * Zc))
    f = WaveField(grid, env)
    return f * (1 / norm(f))


def gaussian_free_closed_form(spec: PacketSpec, grid: GridSpec, t: float, images: int = 1) -> WaveField:
    """Analytic free evolution of the untruncated lab-frame Gaussian (isotropic width).

    On the periodic box the free flow acts on the periodic extension, so the
    oracle sums the translates by up to ``images`` box lengths per axis.
    """
    s2 = float(spec.sigmas[0]) ** 2
    m = spec.mass
    v = np.asarray(spec.velocity, dtype=float)
    c = np.asarray(spec.center, dtype=float)
    X, Y, Zc = grid.mesh()
    a = s2 + 1j * t / (2 * m)
    norm0 = (2 * np.pi * s2) ** -0.75
    L = np.asarray(grid.extents, dtype=float)
    data = np.zeros(grid.shape, dtype=np.complex128)
    rng = range(-images, images + 1)
    for n in itertools.product(rng, rng, rng):
        # the evolved packet translated by n L, carrier included
        cn = c + np.asarray(n) * L
        d = [X - cn[0] - v[0] * t, Y - cn[1] - v[1] * t, Zc - cn[2] - v[2] * t]
        r2 = d[0] ** 2 + d[1] ** 2 + d[2] ** 2
        phase = m * (v[0] * (X - n[0] * L[0]) + v[1] * (Y - n[1] * L[1]) + v[2] * (Zc - n[2] * L[2]))
        data += np.exp(-r2 / (4 * a) + 1j * (phase - m * (v @ v) * t / 2))
    return WaveField(grid, norm0 * (s2 / a) ** 1.5 * data)


def momentum_cutoff(field: WaveField, velocity, mass: float = 1.0, envelope: bool = False) -> WaveField:
    """Multiply the momentum representation by g(|p - m v| / sqrt(v)).

    g is 1 below m/16 and 0 above m/8 with a quintic step in between.  For an
    envelope field (carrier removed) the bump is centered at zero momentum.
    """
    v = np.asarray(velocity, dtype=float)
    speed = float(np.linalg.norm(v))
    if not speed > 0:
        raise ConfigError("momentum cutoff needs a positive speed")
    center = np.zeros(3) if envelope else mass * v
    kx, ky, kz = field.grid.wavenumbers()
    p = np.sqrt((kx[:, None, None] - center[0]) ** 2 + (ky[None, :, None] - center[1]) ** 2
                + (kz[None, None, :] - center[2]) ** 2) / np.sqrt(speed)
    lo, hi = mass / 16, mass / 8
    g = 1 - smoothstep((p - lo) / (hi - lo))
    return WaveField(field.grid, sfft.ifftn(sfft.fftn(field.data) * g))


def free_evolve(field: WaveField, t: float, mass: float = 1.0) -> WaveField:
    if t == 0:
        return field.copy()
    ph = np.exp(-1j * t * field.grid.k_squared() / (2 * mass))
    return WaveField(field.grid, sfft.ifftn(sfft.fftn(field.data) * ph))


def translate(field: WaveField, shift) -> WaveField:
    """Spectral translation by an arbitrary vector (periodic)."""
    kx, ky, kz = field.grid.wavenumbers()
    s = np.asarray(shift, dtype=float)
    ph = np.exp(-1j * (kx[:, None, None] * s[0] + ky[None, :, None] * s[1] + kz[None, None, :] * s[2]))
    return WaveField(field.grid, sfft.ifftn(sfft.fftn(field.data) * ph))


# ---------------------------------------------------------------- discrete Hamiltonian

@dataclass
class PropagatorConfig:
    dt: Optional[float] = None
    scheme: str = "krylov"
    krylov_dim: int = 24
    krylov_tol: float = 1e-10
    V0: float = 0.0
    t0: Optional[float] = None
    stencil_order: int = 2
    kinetic: str = "fd"
    far_past_tol: float = 1e-6
    max_halvings: int = 12

    def __post_init__(self):
        if self.scheme not in ("krylov", "split", "spectral_free"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.stencil_order not in FD_COEFFS:
            raise ConfigError("stencil_order must be 2, 4, 6 or 8")
        if self.kinetic not in ("fd", "spectral"):
            raise ConfigError("kinetic must be 'fd' or 'spectral'")
        if self.krylov_dim < 4:
            raise ConfigError("krylov_dim must be at least 4")


def fd_symbol(grid: GridSpec, order: int) -> np.ndarray:
    """Eigenvalues of the link-free kinetic stencil on plane waves."""
    c = FD_COEFFS[order]
    out = np.zeros(grid.shape)
    for k, (kv, d) in enumerate(zip(grid.wavenumbers(), grid.spacing)):
        s = -(c[0] + 2 * sum(c[j] * np.cos(j * kv * d) for j in range(1, len(c)))) / (2 * d * d)
        shape = [1, 1, 1]
        shape[k] = -1
        out = out + s.reshape(shape)
    return out


def grid_link_phases(grid: GridSpec, field: PotentialField, shift=(0.0, 0.0, 0.0),
                     pad: float = 0.0) -> np.ndarray:
    """Link variables exp(-i int_edge A.dl) on all forward edges.

    For the compactified gauge only edges with an endpoint in the closed ball can
    differ from one, so the work is restricted to nodes near the ball.
    """
    links = np.ones((3,) + grid.shape, dtype=np.complex128)
    if all(f == 0.0 for f in field.fluxes):
        return links
    shift = np.asarray(shift, dtype=float)
    idx = _nodes_near_ball(grid, field, shift, pad) if field.gauge == COMPACTIFIED else None
    pts = _node_points(grid, idx) + shift
    for k in range(3):
        e = np.zeros(3)
        e[k] = grid.spacing[k]
        phase = np.exp(-1j * edge_integrals(field, pts, pts + e))
        if idx is None:
            links[k] = phase.reshape(grid.shape)
        else:
            links[k][idx] = phase
    return links


def _nodes_near_ball(grid: GridSpec, field: PotentialField, shift, pad: float = 0.0):
    """Index arrays of nodes whose forward edges may touch the closed enclosing ball."""
    R = field.R + float(np.max(grid.spacing)) + pad
    ax = grid.axes()
    sel = []
    for k in range(3):
        sel.append(np.nonzero(np.abs(ax[k] + shift[k]) <= R)[0])
    I, J, K = np.meshgrid(*sel, indexing="ij")
    P = np.stack([ax[0][I] + shift[0], ax[1][J] + shift[1], ax[2][K] + shift[2]], axis=-1)
    near = np.linalg.norm(P, axis=-1) <= R
    return I[near], J[near], K[near]


def _node_points(grid: GridSpec, idx) -> np.ndarray:
    ax = grid.axes()
    if idx is None:
        return grid.points()
    return np.stack([ax[0][idx[0]], ax[1][idx[1]], ax[2][idx[2]]], axis=1)


class DiscreteHamiltonian:
    """Covariant finite-difference Hamiltonian 1/2 (p - A)^2 + diag on a periodic grid.

    ``kinetic="fd"`` applies the link stencil directly.  ``kinetic="spectral"``
    uses the exact free dispersion plus a sparse correction equal to the link
    stencil minus the link-free stencil; the correction vanishes wherever all
    links along a hop are one.
    """

    def __init__(self, grid: GridSpec, links: Optional[np.ndarray] = None,
                 diag: Optional[np.ndarray] = None, order: int = 2, kinetic: str = "fd"):
        self.grid = grid
        self.order = order
        self.kinetic = kinetic
        self.coeffs = np.array(FD_COEFFS[order])
        self.inv_dx2 = 1.0 / grid.spacing ** 2
        self.links = np.ones((3,) + grid.shape, dtype=np.complex128) if links is None else links
        self.diag = None if diag is None else np.asarray(diag, dtype=np.float64)
        self._correction = None
        if kinetic == "spectral":
            self._ksym = grid.k_squared() / 2
            self._correction = self._build_correction()

    def _build_correction(self):
        J = len(self.coeffs) - 1
        shape = self.grid.shape
        N = self.grid.size
        rows, cols, vals = [], [], []
        flat = np.arange(N).reshape(shape)
        for k in range(3):
            u = self.links[k]
            active = np.nonzero(np.abs(u - 1) > 0)
            if len(active[0]) == 0:
                continue
            # box of active links along every axis, widened by the hop range along axis k
            lo = [int(a.min()) for a in active]
            hi = [int(a.max()) + 1 for a in active]
            lo[k] -= J
            hi[k] += J
            ids = [np.arange(lo[a], hi[a]) % shape[a] for a in range(3)]
            if any(len(np.unique(i)) < len(i) for i in ids):
                raise ConfigError("active link region wraps onto itself; enlarge the grid")
            sub_u = u[np.ix_(*ids)]
            sub_flat = flat[np.ix_(*ids)]
            n = sub_u.shape[k]
            P = np.ones_like(sub_u)
            w = -0.5 * self.inv_dx2[k]
            for j in range(1, J + 1):
                # transport from x to x + j e over links x, ..., x + (j-1) e
                sl_x = [slice(None)] * 3
                sl_x[k] = slice(0, n - j)
                sl_u = [slice(None)] * 3
                sl_u[k] = slice(j - 1, n - 1)
                sl_t = [slice(None)] * 3
                sl_t[k] = slice(j, n)
                if j == 1:
                    P = sub_u[tuple(sl_x)].copy()
                else:
                    prevshape = [slice(None)] * 3
                    prevshape[k] = slice(0, n - j)
                    P = P[tuple(prevshape)] * sub_u[tuple(sl_u)]
                d = P - 1
                nz = np.abs(d) > 0
                if not np.any(nz):
                    continue
                r = sub_flat[tuple(sl_x)][nz]
                c = sub_flat[tuple(sl_t)][nz]
                val = w * self.coeffs[j] * d[nz]
                rows += [r, c]
                cols += [c, r]
                vals += [val, np.conj(val)]
        if not rows:
            return None
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(N, N))

    def apply(self, psi: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        if self.kinetic == "fd":
            return kernels.peierls_apply(psi, self.links, self.coeffs, self.inv_dx2, self.diag, out)
        res = sfft.ifftn(sfft.fftn(psi) * self._ksym)
        if self._correction is not None:
            res += (self._correction @ psi.ravel()).reshape(psi.shape)
        if self.diag is not None:
            res += self.diag * psi
        if out is not None:
            out[...] = res
            return out
        return res

    def __call__(self, f: WaveField) -> WaveField:
        return WaveField(self.grid, self.apply(f.data))

    def local_part(self):
        """Flat indices S and the sparse block of H minus exact free kinetic restricted to S.

        Only meaningful for the spectral kinetic, where that remainder is the
        link correction plus the diagonal and both live near the magnet.
        """
        if self.kinetic != "spectral":
            raise ConfigError("the local part is defined for the spectral kinetic only")
        N = self.grid.size
        W = self._correction if self._correction is not None else sparse.csr_matrix((N, N))
        if self.diag is not None:
            W = W + sparse.diags(self.diag.ravel())
        W = sparse.csr_matrix(W)
        W.eliminate_zeros()
        S = np.unique(np.concatenate([W.nonzero()[0], W.nonzero()[1]]))
        return S, W[S][:, S]

    def spectral_bound(self) -> float:
        """Upper bound on the largest eigenvalue magnitude."""
        if self.kinetic == "fd":
            kin = 0.5 * float(np.sum(self.inv_dx2)) * float(np.sum(np.abs(self.coeffs)) + np.sum(np.abs(self.coeffs[1:])))
        else:
            kin = float(np.max(self._ksym))
            if self._correction is not None:
                kin += 0.5 * float(np.sum(self.inv_dx2)) * 2 * float(2 * np.sum(np.abs(self.coeffs[1:])))
        d = 0.0 if self.diag is None else float(np.max(np.abs(self.diag)))
        return kin + d

    def gauge_transformed(self, chi: np.ndarray) -> "DiscreteHamiltonian":
        """Links multiplied by exp(-i (chi(x+e) - chi(x))): H -> e^{i chi} H e^{-i chi}."""
        links = self.links.copy()
        for k in range(3):
            links[k] *= np.exp(-1j * (np.roll(chi, -1, axis=k) - chi))
        return DiscreteHamiltonian(self.grid, links, self.diag, self.order, self.kinetic)


def build_hamiltonian(grid: GridSpec, field: Optional[PotentialField], config: PropagatorConfig,
                      shift=(0.0, 0.0, 0.0)) -> DiscreteHamiltonian:
    """Lattice Hamiltonian with exact link phases and diagonal V + V0 on the magnet."""
    if field is None:
        return DiscreteHamiltonian(grid, None, None, config.stencil_order, config.kinetic)
    links = grid_link_phases(grid, field, shift)
    pts = grid.points() + np.asarray(shift, dtype=float)
    diag = eval_V(field, pts).reshape(grid.shape)
    if config.V0:
        diag = diag + config.V0 * field.magnet.contains(pts).reshape(grid.shape)
    if not np.any(diag):
        diag = None
    return DiscreteHamiltonian(grid, links, diag, config.stencil_order, config.kinetic)


# ---------------------------------------------------------------- Krylov propagation

class Lanczos:
    """exp(-i tau H) v by a Hermitian Krylov subspace with an a-posteriori error estimate."""

    def __init__(self, shape, dim: int = 24, tol: float = 1e-10, max_halvings: int = 12):
        self.dim = dim
        self.tol = tol
        self.max_halvings = max_halvings
        self.V = np.empty((dim + 1,) + tuple(shape), dtype=np.complex128)
        self.matvecs = 0

    def _try(self, apply, v, tau):
        beta0 = np.linalg.norm(v)
        if beta0 == 0:
            return v.copy(), 0.0
        V = self.V
        V[0] = v / beta0
        alpha = np.zeros(self.dim)
        beta = np.zeros(self.dim)
        w = np.empty_like(v)
        err = np.inf
        for j in range(self.dim):
            apply(V[j], out=w)
            self.matvecs += 1
            a = np.vdot(V[j], w).real
            w -= a * V[j]
            if j > 0:
                w -= beta[j - 1] * V[j - 1]
            # one pass of local reorthogonalization
            c = np.vdot(V[j], w)
            w -= c * V[j]
            a += c.real
            alpha[j] = a
            b = np.linalg.norm(w)
            beta[j] = b
            if j >= 2 or b < 1e-14:
                theta, Q = eigh_tridiagonal(alpha[:j + 1], beta[:j]) if j > 0 else (alpha[:1], np.ones((1, 1)))
                y = Q @ (np.exp(-1j * tau * theta) * Q[0])
                err = beta0 * b * abs(y[-1])
                if err < self.tol or b < 1e-14:
                    return beta0 * np.tensordot(y, V[:j + 1], axes=1), err
            V[j + 1] = w / b
        return None, err

    def step(self, apply, v, tau, depth: int = 0):
        out, err = self._try(apply, v, tau)
        if out is not None:
            return out
        if depth >= self.max_halvings:
            raise KrylovStall(f"Krylov residual {err:.3e} above {self.tol:.1e} at dimension {self.dim}")
        half = self.step(apply, v, tau / 2, depth + 1)
        return self.step(apply, half, tau / 2, depth + 1)


def far_past_mass(field: WaveField, magnet: MagnetAssembly, distance: float, shift=(0.0, 0.0, 0.0)) -> float:
    """Mass of the field within ``distance`` of the magnet (grid points displaced by shift)."""
    pts = field.grid.points() + np.asarray(shift, dtype=float)
    R = magnet.enclosing_radius + distance
    near = np.linalg.norm(pts, axis=1) <= R
    mask = np.zeros(field.grid.size, dtype=bool)
    mask[near] = magnet.distance_bound(pts[near]) <= distance
    return mass_where(field, mask.reshape(field.grid.shape))


@dataclass
class Snapshot:
    t: float
    field: WaveField


def _time_grid(t0, t1, dt, stops):
    pts = sorted({float(t0), float(t1)} | {float(s) for s in stops if t0 < s < t1})
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(np.ceil((b - a) / dt - 1e-9)))
        out += list(a + (b - a) * np.arange(n) / n)
    return out + [float(t1)]


def interacting_evolve(phi: WaveField, t0: float, t1: float, H: DiscreteHamiltonian,
                       config: PropagatorConfig, guard: Optional[tuple] = None,
                       snapshot_times: Iterable[float] = (), prepared: bool = False,
                       on_step: Optional[Callable] = None):
    """Prepare psi(t0) = free(t0) phi, then step the lattice Hamiltonian to t1.

    ``guard`` is ``(magnet, sigma)``; the prepared state's mass within 2 sigma of
    the magnet must stay below ``config.far_past_tol``.  Returns the final field
    and a list of snapshots at the requested times.
    """
    psi = phi.copy() if prepared else free_evolve(phi, t0)
    if guard is not None:
        magnet, sigma = guard
        m = far_past_mass(psi, magnet, 2 * sigma)
        if m >= config.far_past_tol:
            raise FarPastGuard(f"mass {m:.3e} within 2 sigma of the magnet at t0={t0}")
    stops = list(snapshot_times)
    snaps = [Snapshot(t0, psi.copy())] if t0 in stops else []
    if config.scheme == "spectral_free":
        for s in sorted(stops):
            if t0 < s <= t1:
                snaps.append(Snapshot(s, free_evolve(psi, s - t0)))
        return free_evolve(psi, t1 - t0), snaps
    dt = config.dt or (t1 - t0)
    times = _time_grid(t0, t1, dt, stops)
    lz = Lanczos(H.grid.shape, config.krylov_dim, config.krylov_tol, config.max_halvings)
    data = psi.data
    for a, b in zip(times[:-1], times[1:]):
        data = lz.step(H.apply, data, b - a)
        if on_step is not None:
            on_step(b, data)
        if any(abs(b - s) < 1e-12 for s in stops):
            snaps.append(Snapshot(b, WaveField(H.grid, data.copy())))
    return WaveField(H.grid, data), snaps


# ---------------------------------------------------------------- moving frame

def _local_step(H: DiscreteHamiltonian, data: np.ndarray, tau: float, config: PropagatorConfig,
                counter: Lanczos) -> np.ndarray:
    """exp(-i tau W) on the sparse remainder W = H - free kinetic, acting on its support only."""
    S, W = H.local_part()
    if len(S) == 0:
        return data
    lz = Lanczos((len(S),), config.krylov_dim, config.krylov_tol, config.max_halvings)

    def apply(v, out):
        out[...] = W @ v
        return out

    flat = data.reshape(-1)
    flat[S] = lz.step(apply, flat[S], tau)
    counter.matvecs += lz.matvecs
    return data


class MovingFrameHamiltonian:
    """Hamiltonian for the envelope u in psi(x,t) = exp(i(v.x - v^2 t/2)) u(x - v t, t).

    u obeys i u_t = 1/2 (p - A_t)^2 u - v.A_t u + V_t u with A_t(y) = A(y + v t),
    so the magnet sweeps through a grid that follows the packet.  Requires the
    compactified gauge so that only nodes near the ball see non-trivial terms.
    """

    def __init__(self, grid: GridSpec, field: PotentialField, velocity, config: PropagatorConfig):
        if field.gauge != COMPACTIFIED:
            raise ConfigError("the moving frame needs the compactified gauge")
        self.grid = grid
        self.field = field
        self.velocity = np.asarray(velocity, dtype=float)
        self.config = config
        self.mass = 1.0

    def at(self, t: float) -> DiscreteHamiltonian:
        """Instantaneous Hamiltonian at time t."""
        return self._build(t, self._drift_point)

    def over(self, a: float, b: float) -> DiscreteHamiltonian:
        """Step Hamiltonian for [a, b]: links at the midpoint, -v.A averaged over the step.

        The average is the exact integral of A along the path y + v s, so the
        phase it generates changes by a lattice gauge factor when a flux is
        shifted by 2 pi, as the continuum equation does.
        """
        return self._build(0.5 * (a + b), lambda idx, t: self._drift_step(idx, a, b),
                           pad=float(np.linalg.norm(self.velocity)) * abs(b - a))

    def _drift_point(self, idx, t):
        shift = self.velocity * t
        pts = _node_points(self.grid, idx) + shift
        inside = np.linalg.norm(pts, axis=1) < self.field.R
        A = np.zeros((len(pts), 3))
        live = inside.copy()
        for tor in self.field.magnet.tori:
            live &= tor.core_distance(pts) > 1e-9
        if np.any(live):
            A[live] = eval_A(self.field, pts[live], method="closed")
        return -(A @ self.velocity)

    def _drift_step(self, idx, a, b):
        y = _node_points(self.grid, idx)
        return -edge_integrals(self.field, y + self.velocity * a, y + self.velocity * b) / (b - a)

    def _build(self, t: float, drift, pad: float = 0.0) -> DiscreteHamiltonian:
        grid, field, cfg = self.grid, self.field, self.config
        shift = self.velocity * t
        links = grid_link_phases(grid, field, shift)
        diag = np.zeros(grid.shape)
        if any(f != 0.0 for f in field.fluxes):
            idx = _nodes_near_ball(grid, field, shift, pad)
            diag[idx] = drift(idx, t)
        if field.v_profile.kind != "none" or cfg.V0:
            pts = grid.points() + shift
            extra = eval_V(field, pts)
            if cfg.V0:
                extra = extra + cfg.V0 * field.magnet.contains(pts)
            diag = diag + extra.reshape(grid.shape)
        return DiscreteHamiltonian(grid, links, diag if np.any(diag) else None,
                                   cfg.stencil_order, cfg.kinetic)


def moving_frame_evolve(u: WaveField, t0: float, t1: float, factory: MovingFrameHamiltonian,
                        config: PropagatorConfig, snapshot_times: Iterable[float] = (),
                        on_step: Optional[Callable] = None):
    """Exponential midpoint stepping of the envelope from t0 to t1 (u given at t0).

    Links are taken at the step midpoint and the drift term -v.A is averaged
    exactly over the step.
    """
    stops = list(snapshot_times)
    dt = config.dt
    if dt is None:
        speed = float(np.linalg.norm(factory.velocity))
        dt = 0.5 * float(np.min(u.grid.spacing)) / max(speed, 1e-12)
    times = _time_grid(t0, t1, dt, stops)
    lz = Lanczos(u.grid.shape, config.krylov_dim, config.krylov_tol, config.max_halvings)
    data = u.data.copy()
    snaps = [Snapshot(t0, u.copy())] if any(abs(t0 - s) < 1e-12 for s in stops) else []
    split = config.scheme == "split"
    if split and config.kinetic != "spectral":
        raise ConfigError("split stepping needs the spectral kinetic")
    half = {}
    for a, b in zip(times[:-1], times[1:]):
        H = factory.over(a, b)
        if split:
            tau = b - a
            key = round(tau, 15)
            if key not in half:
                half[key] = np.exp(-0.25j * tau * u.grid.k_squared())
            data = sfft.ifftn(sfft.fftn(data) * half[key])
            data = _local_step(H, data, tau, config, lz)
            data = sfft.ifftn(sfft.fftn(data) * half[key])
        else:
            data = lz.step(H.apply, data, b - a)
        if on_step is not None:
            on_step(b, data)
        if any(abs(b - s) < 1e-12 for s in stops):
            snaps.append(Snapshot(b, WaveField(u.grid, data.copy())))
    return WaveField(u.grid, data), snaps, lz.matvecs
