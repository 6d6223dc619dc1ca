"""Curl-free exterior vector potentials with prescribed fluxes through torus holes.

Each torus carries a line current of strength Phi_j along its core circle.  The
resulting field is the gradient of the solid angle subtended by the spanning
disk, A = (Phi/4pi) grad Omega, which has circulation Phi around the core and no
curl elsewhere.  Omega is evaluated in closed form with Carlson elliptic
integrals; A itself is evaluated by midpoint Biot-Savart quadrature.

The compactified gauge subtracts grad(chi * lambda_ext) where lambda_ext is the
single-valued scalar potential outside the spanning disks and chi a smooth
radial cutoff, so that the new potential vanishes outside the enclosing ball.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ellipe, ellipk, elliprf, elliprj, roots_legendre

from . import kernels
from .errors import (ConfigError, LoopIntersectsMagnet, OutsideDomain, SingularPoint,
                     UnrealizedClass)
from .geometry import (HOLE, OUT, LineClassification, MagnetAssembly, TorusComponent,
                       chord, classify_lines, orthonormal_frame, region_mask, unit)

SOLID_ANGLE = "solid_angle"
COMPACTIFIED = "compactified"
SINGULAR_TOL = 1e-9

_GX, _GW = roots_legendre(8)
_GX = 0.5 * (_GX + 1.0)
_GW = 0.5 * _GW


# ---------------------------------------------------------------- solid angle

def solid_angle(points, torus: TorusComponent) -> np.ndarray:
    """Signed solid angle of the oriented spanning disk seen from each point.

    Positive on the side opposite to the normal; jumps by -4pi when a point
    crosses the disk along the normal; tends to zero at infinity.  Points on the
    disk plane count as lying on the normal side.
    """
    pts = np.asarray(points, dtype=float)
    shape = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    n = torus.normal
    a = torus.major_radius
    w = pts - torus.center
    z = w @ n
    rho = np.linalg.norm(w - np.outer(z, n), axis=1)
    # the closed form is singular exactly on the cylinder rho = a; nudge inward
    near = np.abs(rho - a) < 1e-12 * a
    rho = np.where(near, a * (1 - 1e-12), rho)
    zz = np.abs(z)
    s = (a + rho) ** 2 + zz ** 2
    k2 = 4 * a * rho / s
    m = 4 * a * rho / (a + rho) ** 2
    K = elliprf(0.0, 1 - k2, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        Pi = K + m / 3 * elliprj(0.0, 1 - k2, 1.0, 1 - m)
    Pi = np.where(m == 0, K, Pi)
    H = np.where(rho < a, 2 * np.pi, 0.0)
    om = H - 2 * zz / np.sqrt(s) * (K + (a - rho) / (a + rho) * Pi)
    sgn = np.where(z >= 0, -1.0, 1.0)
    return (sgn * om).reshape(shape)


def disk_side(points, torus: TorusComponent) -> np.ndarray:
    return (np.asarray(points, dtype=float) - torus.center) @ torus.normal >= 0


def segment_disk_crossings(p, q, torus: TorusComponent) -> np.ndarray:
    """Signed count (0 or +-1) of crossings of each segment p->q through the disk."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n = torus.normal
    hp = (p - torus.center) @ n
    hq = (q - torus.center) @ n
    sp = hp >= 0
    sq = hq >= 0
    flip = sp != sq
    out = np.zeros(np.broadcast(hp, hq).shape, dtype=np.int64)
    if np.any(flip):
        hp_f = np.broadcast_to(hp, out.shape)[flip]
        hq_f = np.broadcast_to(hq, out.shape)[flip]
        pf = np.broadcast_to(p, out.shape + (3,))[flip]
        qf = np.broadcast_to(q, out.shape + (3,))[flip]
        t = hp_f / (hp_f - hq_f)
        x = pf + t[:, None] * (qf - pf) - torus.center
        x = x - np.outer(x @ n, n)
        inside = np.linalg.norm(x, axis=1) < torus.major_radius
        sgn = np.where(hq_f >= 0, 1, -1)
        out[flip] = np.where(inside, sgn, 0)
    return out


# ---------------------------------------------------------------- scalar profiles

@dataclass(frozen=True)
class VProfile:
    """Scalar potential: ``power`` is V0 (1+|x-c|^2)^(-alpha/2); ``indicator`` is V0 on K."""

    kind: str = "none"
    V0: float = 0.0
    alpha: float = 2.0
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("none", "power", "indicator"):
            raise ConfigError(f"unknown potential profile {self.kind!r}")
        if self.kind == "power" and not self.alpha > 1:
            raise ConfigError("decay exponent alpha must exceed 1")


def smoothstep(s):
    """Quintic C2 step: 0 for s<=0, 1 for s>=1."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s * s)


def smoothstep_deriv(s):
    inside = (s > 0) & (s < 1)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 30 * s * s * (1 - s) ** 2, 0.0)


# ---------------------------------------------------------------- field

@dataclass(frozen=True)
class PotentialField:
    magnet: MagnetAssembly
    fluxes: tuple
    gauge: str = SOLID_ANGLE
    quad_order: int = 2048
    v_profile: VProfile = field(default_factory=VProfile)

    def __post_init__(self):
        fl = tuple(float(f) for f in np.atleast_1d(self.fluxes))
        object.__setattr__(self, "fluxes", fl)
        if len(fl) != len(self.magnet.tori):
            raise ConfigError("one flux per torus component is required")
        if not all(np.isfinite(fl)):
            raise ConfigError("fluxes must be finite")
        if self.gauge not in (SOLID_ANGLE, COMPACTIFIED):
            raise ConfigError(f"unknown gauge {self.gauge!r}")
        if self.quad_order < 8:
            raise ConfigError("quad_order must be at least 8")

    @property
    def R(self) -> float:
        return self.magnet.enclosing_radius

    @cached_property
    def cutoff_width(self) -> float:
        """Width of the radial shell where the compactifying cutoff rises from 0 to 1."""
        reach = max([float(np.linalg.norm(t.center)) + t.major_radius for t in self.magnet.tori],
                    default=0.0)
        return min(0.1 * self.R, 0.5 * (self.R - reach))

    @cached_property
    def _quadrature(self):
        nodes, dls, weights = [], [], []
        M = self.quad_order
        for t, phi in zip(self.magnet.tori, self.fluxes):
            e1, e2 = orthonormal_frame(t.normal)
            th = 2 * np.pi * (np.arange(M) + 0.5) / M
            a = t.major_radius
            nodes.append(t.center + a * (np.outer(np.cos(th), e1) + np.outer(np.sin(th), e2)))
            dls.append(a * 2 * np.pi / M * (np.outer(-np.sin(th), e1) + np.outer(np.cos(th), e2)))
            weights.append(phi / (4 * np.pi))
        return nodes, dls, weights

    def with_fluxes(self, fluxes: Sequence[float]) -> "PotentialField":
        return replace(self, fluxes=tuple(fluxes))


def make_field(magnet, fluxes, gauge=SOLID_ANGLE, **kw) -> PotentialField:
    return PotentialField(magnet, tuple(fluxes), gauge, **kw)


def compactify(field: PotentialField) -> PotentialField:
    return replace(field, gauge=COMPACTIFIED)


def _points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 3), x.shape[:-1], x.ndim == 1


def check_singular(field: PotentialField, pts) -> None:
    for t in field.magnet.tori:
        if np.any(t.core_distance(pts) < SINGULAR_TOL):
            raise SingularPoint("point lies on a core circle")


def scalar_potential(field: PotentialField, x) -> np.ndarray:
    """S(x) = sum_j Phi_j Omega_j(x) / 4pi; A = grad S off the spanning disks."""
    pts, shape, _ = _points(x)
    s = np.zeros(len(pts))
    for t, phi in zip(field.magnet.tori, field.fluxes):
        if phi != 0.0:
            s += phi / (4 * np.pi) * solid_angle(pts, t)
    return s.reshape(shape)


def cutoff(field: PotentialField, r) -> np.ndarray:
    eps = field.cutoff_width
    return smoothstep((np.asarray(r) - (field.R - eps)) / eps)


def cutoff_deriv(field: PotentialField, r) -> np.ndarray:
    eps = field.cutoff_width
    return smoothstep_deriv((np.asarray(r) - (field.R - eps)) / eps) / eps


def gauge_shift(field: PotentialField, x) -> np.ndarray:
    """chi(|x|) * lambda_ext(x): the scalar removed by compactification (zero for the solid-angle gauge)."""
    pts, shape, _ = _points(x)
    if field.gauge != COMPACTIFIED:
        return np.zeros(shape)
    r = np.linalg.norm(pts, axis=1)
    chi = cutoff(field, r)
    g = np.zeros(len(pts))
    live = chi > 0
    if np.any(live):
        g[live] = chi[live] * scalar_potential(field, pts[live])
    return g.reshape(shape)


def gauge_scalar(field: PotentialField, x) -> np.ndarray:
    """S(x) - g(x): the single-valued part of lambda away from the spanning disks.

    In the compactified gauge the cutoff equals one outside the ball, so the
    difference vanishes there and only interior points need the solid angle.
    """
    pts, shape, _ = _points(x)
    if field.gauge != COMPACTIFIED:
        return scalar_potential(field, pts).reshape(shape)
    out = np.zeros(len(pts))
    inner = np.linalg.norm(pts, axis=1) < field.R
    if np.any(inner):
        p = pts[inner]
        s = scalar_potential(field, p)
        out[inner] = s - cutoff(field, np.linalg.norm(p, axis=1)) * s
    return out.reshape(shape)


def loop_field(points, torus: TorusComponent) -> np.ndarray:
    """Closed-form field of a unit current on the core circle, circulating about the normal.

    Complete elliptic integrals in the cylindrical frame of the loop; equals the
    Biot-Savart integral divided by 4pi.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = torus.normal
    a = torus.major_radius
    w = pts - torus.center
    z = w @ n
    radial = w - np.outer(z, n)
    rho = np.linalg.norm(radial, axis=1)
    al2 = (a - rho) ** 2 + z * z
    be2 = (a + rho) ** 2 + z * z
    be = np.sqrt(be2)
    m = 4 * a * rho / be2
    K = ellipk(m)
    E = ellipe(m)
    Bz = (K + (a * a - rho * rho - z * z) / al2 * E) / (2 * np.pi * be)
    on_axis = rho < 1e-12 * a
    safe = np.where(on_axis, 1.0, rho)
    Brho = np.where(on_axis, 0.0, z / (2 * np.pi * safe * be) * (-K + (a * a + rho * rho + z * z) / al2 * E))
    rhat = radial / safe[:, None]
    return Brho[:, None] * rhat + Bz[:, None] * n


def closed_form_A(field: PotentialField, pts) -> np.ndarray:
    """Solid-angle-gauge potential from the elliptic closed form (no quadrature error)."""
    out = np.zeros((len(pts), 3))
    for t, phi in zip(field.magnet.tori, field.fluxes):
        if phi != 0.0 and len(pts):
            out += phi * loop_field(pts, t)
    return out


def biot_savart_A(field: PotentialField, pts) -> np.ndarray:
    out = np.zeros((len(pts), 3))
    nodes, dls, weights = field._quadrature
    for q, dl, w in zip(nodes, dls, weights):
        if w != 0.0 and len(pts):
            out += w * kernels.biot_savart(pts, q, dl)
    return out


def eval_A(field: PotentialField, x, method: str = "quadrature") -> np.ndarray:
    """A at points; ``method`` is "quadrature" (midpoint Biot-Savart) or "closed" (elliptic)."""
    pts, shape, _ = _points(x)
    check_singular(field, pts)
    base = closed_form_A if method == "closed" else biot_savart_A
    if field.gauge == SOLID_ANGLE:
        return base(field, pts).reshape(shape + (3,))
    out = np.zeros((len(pts), 3))
    r = np.linalg.norm(pts, axis=1)
    inner = r < field.R
    if np.any(inner):
        p = pts[inner]
        ri = r[inner]
        chi = cutoff(field, ri)
        dchi = cutoff_deriv(field, ri)
        A = base(field, p)
        shell = dchi != 0
        corr = np.zeros_like(A)
        if np.any(shell):
            corr[shell] = (dchi[shell] * scalar_potential(field, p[shell]) / ri[shell])[:, None] * p[shell]
        out[inner] = (1 - chi)[:, None] * A - corr
    return out.reshape(shape + (3,))


def eval_V(field: PotentialField, x) -> np.ndarray:
    pts, shape, _ = _points(x)
    v = field.v_profile
    if v.kind == "none" or v.V0 == 0.0:
        return np.zeros(shape)
    if v.kind == "power":
        d2 = np.sum((pts - np.asarray(v.center)) ** 2, axis=1)
        return (v.V0 * (1 + d2) ** (-v.alpha / 2)).reshape(shape)
    return (v.V0 * field.magnet.contains(pts)).reshape(shape)


def edge_integrals(field: PotentialField, p, q) -> np.ndarray:
    """Exact integral of A along straight segments p->q that avoid the core circles."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    total = scalar_potential(field, q) - scalar_potential(field, p)
    for t, phi in zip(field.magnet.tori, field.fluxes):
        if phi != 0.0:
            total = total + phi * segment_disk_crossings(p, q, t)
    if field.gauge == COMPACTIFIED:
        total = total - (gauge_shift(field, q) - gauge_shift(field, p))
    return total


# ---------------------------------------------------------------- quadrature

def adaptive_gauss(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                   tol: float = 1e-9, max_level: int = 40) -> float:
    """Integral of a vectorized scalar function on [a, b].

    Panels are bisected until the 8-point Gauss rule on a panel and on its two
    halves agree to a share of ``tol`` proportional to the panel length.
    """
    if a == b:
        return 0.0
    lo = np.array([a], dtype=float)
    hi = np.array([b], dtype=float)
    span = abs(b - a)

    def rule(l, h):
        x = l[:, None] + (h - l)[:, None] * _GX[None, :]
        v = f(x.ravel()).reshape(x.shape)
        return (h - l) * (v @ _GW)

    whole = rule(lo, hi)
    total = 0.0
    for _ in range(max_level):
        mid = 0.5 * (lo + hi)
        left = rule(lo, mid)
        right = rule(mid, hi)
        halves = left + right
        ok = np.abs(halves - whole) < max(tol, 1e-15) * np.abs(hi - lo) / span
        total += float(np.sum(halves[ok]))
        if np.all(ok):
            return total
        keep = ~ok
        lo = np.concatenate([lo[keep], mid[keep]])
        hi = np.concatenate([mid[keep], hi[keep]])
        whole = np.concatenate([left[keep], right[keep]])
    return total + float(np.sum(whole))


def segment_integral(field: PotentialField, p, q, tol: float = 1e-9) -> float:
    """Integral of A along the segment p->q by adaptive Gauss quadrature."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q - p
    if not np.any(d):
        return 0.0

    def f(s):
        return eval_A(field, p + s[:, None] * d) @ d

    return adaptive_gauss(f, 0.0, 1.0, tol)


def polyline_integral(field: PotentialField, path, tol: float = 1e-9) -> float:
    path = np.asarray(path, dtype=float)
    return float(sum(segment_integral(field, path[i], path[i + 1], tol) for i in range(len(path) - 1)))


def circulation(field: PotentialField, loop, tol: float = 1e-9) -> float:
    """Integral of A around a closed polyline (the last vertex connects back to the first)."""
    loop = np.asarray(loop, dtype=float)
    closed = np.vstack([loop, loop[:1]]) if np.any(loop[0] != loop[-1]) else loop
    # dense probe of the segments for contact with the magnet
    s = np.linspace(0, 1, 33)
    probe = (closed[:-1, None, :] + s[None, :, None] * (closed[1:] - closed[:-1])[:, None, :]).reshape(-1, 3)
    if np.any(field.magnet.contains(probe)):
        raise LoopIntersectsMagnet("loop passes through the magnet")
    return polyline_integral(field, closed, tol)


def tail_cut(field: PotentialField, x, vhat) -> float:
    """Truncation length for infinite line integrals (analytic tail below 1e-8)."""
    T = 100 * field.R
    while True:
        ends = np.array([x + T * vhat, x - T * vhat])
        amp = np.max(np.linalg.norm(eval_A(field, ends), axis=1))
        if amp * T < 1e-8 or T > 1e9:
            return T
        T *= 2


def _ray_integral(field, x, u, t0, t1, tol):
    def f(s):
        return eval_A(field, x + s[:, None] * u) @ u

    # geometric panels keep the far tail cheap
    if t1 < t0:
        return -_ray_integral(field, x, u, t1, t0, tol)
    edges = [t0]
    inner = 2 * field.R + float(np.linalg.norm(x))
    for c in (-inner, inner):
        if t0 < c < t1:
            edges.append(c)
    edges.append(t1)
    edges = sorted(set(edges))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a > 4 * inner and (a >= inner or b <= -inner):
            # split long outer stretches into doubling panels
            pts = [a]
            if a >= inner:
                while pts[-1] * 2 < b:
                    pts.append(pts[-1] * 2)
            else:
                pts = [b]
                while pts[-1] * 2 > a:
                    pts.append(pts[-1] * 2)
                pts = pts[::-1]
                pts[0] = a
            pts.append(b)
            pts = sorted(set(pts))
            for c, d in zip(pts[:-1], pts[1:]):
                total += adaptive_gauss(f, c, d, tol)
        else:
            total += adaptive_gauss(f, a, b, tol)
    return total


def line_integral_L(field: PotentialField, x, vhat, t, tol: float = 1e-10) -> float:
    """Integral of vhat . A along x + tau vhat for tau from 0 to t (t may be +-inf)."""
    x = np.asarray(x, dtype=float)
    u = unit(vhat)
    if t == 0:
        return 0.0
    if field.gauge == COMPACTIFIED:
        # the compactified potential vanishes outside the closed ball: integrate the chord only
        ti, to, meets = chord(x, u, field.R)
        if not meets[0]:
            return 0.0
        lo, hi = (0.0, t) if t > 0 else (t, 0.0)
        lo, hi = max(lo, ti[0]), min(hi, to[0])
        if hi <= lo:
            return 0.0
        val = adaptive_gauss(lambda s: eval_A(field, x + s[:, None] * u) @ u, lo, hi, tol)
        return val if t > 0 else -val
    if np.isinf(t):
        T = tail_cut(field, x, u)
        t = T if t > 0 else -T
    return _ray_integral(field, x, u, 0.0, float(t), tol)


def line_integral_exact(field: PotentialField, x, vhat, t) -> np.ndarray:
    """Closed-form counterpart of line_integral_L, vectorized over base points."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    u = unit(vhat)
    if np.isinf(t):
        sgn = 1 if t > 0 else -1
        # from the base point out to infinity (or back from -infinity)
        total = -gauge_scalar(field, pts)
        for tor, phi in zip(field.magnet.tori, field.fluxes):
            if phi != 0.0:
                total = total + phi * _ray_crossings(pts, sgn * u, tor)
        return total
    return edge_integrals(field, pts, pts + t * u)


def _ray_crossings(pts, u, torus):
    """Signed disk crossings of the rays x + tau u, tau > 0 (sign relative to u)."""
    n = torus.normal
    denom = float(u @ n)
    if denom == 0.0:
        return np.zeros(len(pts), dtype=np.int64)
    h = (pts - torus.center) @ n
    tau = -h / denom
    hit = pts + tau[:, None] * u - torus.center
    hit = hit - np.outer(hit @ n, n)
    inside = np.linalg.norm(hit, axis=1) < torus.major_radius
    # a start exactly on the disk counts as the normal side, matching disk_side
    start_below = h < 0
    crosses = np.where(denom > 0, start_below, ~start_below) & (tau >= 0) & inside
    return np.where(crosses, int(np.sign(denom)), 0)


def upstream_phase(field: PotentialField, x, vhat) -> np.ndarray:
    """Integral of vhat . A along the ray arriving at x from -infinity (= -L(-inf))."""
    return -line_integral_exact(field, x, vhat, -np.inf)


def full_line_integral(field: PotentialField, x, vhat) -> np.ndarray:
    """Integral of vhat . A over the entire line through x: sum_j Phi_j times disk crossings."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    u = unit(vhat)
    total = np.zeros(len(pts))
    _, sig = classify_lines(pts, u, field.magnet)
    for j, phi in enumerate(field.fluxes):
        total += phi * sig[:, j]
    return total


# ---------------------------------------------------------------- hole fluxes

def representative_line(magnet: MagnetAssembly, signature, vhat, n: int = 161):
    """A base point whose line along vhat has the given signature, or None."""
    u = unit(vhat)
    e1, e2 = orthonormal_frame(u)
    R = magnet.enclosing_radius
    s = np.linspace(-R, R, n)
    g1, g2 = np.meshgrid(s, s, indexing="ij")
    pts = g1.reshape(-1, 1) * e1 + g2.reshape(-1, 1) * e2
    pts = pts[np.linalg.norm(pts, axis=1) < R]
    hit, sig = classify_lines(pts, u, magnet)
    want = np.asarray(signature, dtype=np.int64)
    ok = (~hit) & np.all(sig == want, axis=1)
    if not np.any(ok):
        return None
    cand = pts[ok]
    # prefer the candidate deepest inside its class region
    return cand[np.argmin(np.linalg.norm(cand - cand.mean(axis=0), axis=1))]


def _probe_directions(magnet):
    dirs = [np.eye(3)[i] for i in range(3)]
    dirs += [t.axis for t in magnet.tori]
    return dirs + [-d for d in dirs]


def flux_F_h(field: PotentialField, h, vhat=None) -> float:
    h = tuple(int(s) for s in h)
    if len(h) != len(field.fluxes):
        raise UnrealizedClass("signature length differs from the number of tori")
    if any(h):
        dirs = [unit(vhat)] if vhat is not None else _probe_directions(field.magnet)
        if all(representative_line(field.magnet, h, d) is None for d in dirs):
            raise UnrealizedClass(f"no straight line realizes signature {h}")
    return float(sum(s * phi for s, phi in zip(h, field.fluxes)))


# ---------------------------------------------------------------- gauge functions

def _outer_route(a, b, radius, halfspace=None):
    """Polyline from a to b outside the ball of the given radius.

    Both endpoints must lie at distance >= the enclosing radius.  The route goes
    radially to ``radius``, follows a great circle, then goes radially to b.
    With ``halfspace`` (a unit vector u and sign s) every vertex keeps s*(x.u) > 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ah, bh = unit(a), unit(b)
    cosang = float(np.clip(ah @ bh, -1, 1))
    ang = np.arccos(cosang)
    if ang > np.pi - 1e-6:
        # antipodal: go through any perpendicular direction (inside the half space if given)
        mid = orthonormal_frame(ah)[0] if halfspace is None else unit(halfspace[1] * halfspace[0] - (halfspace[1] * halfspace[0] @ ah) * ah)
        return np.vstack([_outer_route(a, radius * mid, radius, halfspace)[:-1],
                          _outer_route(radius * mid, b, radius, halfspace)])
    nseg = max(2, int(np.ceil(ang / np.radians(5))))
    th = np.linspace(0, 1, nseg + 1)
    perp = bh - cosang * ah
    pn = np.linalg.norm(perp)
    if pn < 1e-14:
        arc = np.array([radius * ah])
    else:
        perp = perp / pn
        arc = radius * (np.outer(np.cos(th * ang), ah) + np.outer(np.sin(th * ang), perp))
    pts = [a] + list(arc) + [b]
    out = [pts[0]]
    for p in pts[1:]:
        if np.linalg.norm(p - out[-1]) > 1e-14:
            out.append(p)
    return np.array(out)


@dataclass(frozen=True)
class GaugeFunction:
    """lambda for one class: zero at the base point, gradient equal to A on the class domain."""

    field: PotentialField
    cls: LineClassification
    vhat: np.ndarray
    x0: np.ndarray
    detour: float = 1.5
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        u = unit(self.vhat)
        object.__setattr__(self, "vhat", u)
        x0 = np.asarray(self.x0, dtype=float)
        if not x0 @ u < -self.field.R:
            raise ConfigError("base point must satisfy x0 . v < -R")
        object.__setattr__(self, "x0", x0)
        if self.cls.kind == HOLE and self.reference is None:
            ref = representative_line(self.field.magnet, self.cls.signature, u)
            if ref is None:
                raise UnrealizedClass(f"signature {self.cls.signature} not realized along v")
            object.__setattr__(self, "reference", ref)

    def path(self, x) -> np.ndarray:
        """Canonical admissible polyline from x0 to x."""
        x = np.asarray(x, dtype=float)
        u = self.vhat
        R = self.field.R
        Rd = self.detour * R
        if np.allclose(x, self.x0):
            return np.array([self.x0, self.x0])
        if not region_mask(x[None], self.cls, u, self.field.magnet)[0]:
            raise OutsideDomain("point is not in the domain of this class")
        r = float(np.linalg.norm(x))
        minus = (u, -1.0)
        plus = (u, 1.0)
        if r <= R:
            ti, _, _ = chord(x, u, R)
            x_in = x + ti[0] * u
            return np.vstack([_outer_route(self.x0, x_in, Rd, minus), x[None]])
        if self.cls.kind == OUT or x @ u < 0:
            half = minus if x @ u < 0 else None
            return _outer_route(self.x0, x, Rd, half)
        ti, to, _ = chord(self.reference, u, R)
        ref_in = self.reference + ti[0] * u
        ref_out = self.reference + to[0] * u
        first = _outer_route(self.x0, ref_in, Rd, minus)
        last = _outer_route(ref_out, x, Rd, plus)
        return np.vstack([first, last])

    def by_path(self, x, tol: float = 1e-9) -> float:
        return polyline_integral(self.field, self.path(x), tol)

    def __call__(self, x) -> np.ndarray:
        """Closed-form evaluation on many points (no domain check)."""
        return gauge_lambda_points(self.field, self.cls, x, self.vhat, self.x0)


def gauge_lambda_points(field: PotentialField, cls: LineClassification, x, vhat, x0=None) -> np.ndarray:
    """Vectorized lambda for points assumed to lie in the class domain.

    Uses lambda(x) = S(x) - S(x0) + sum_j Phi_j n_j - (g(x) - g(x0)) where n_j
    counts disk crossings along the canonical path; only its straight pieces
    inside the ball can cross a disk.
    """
    pts, shape, _ = _points(x)
    u = unit(vhat)
    R = field.R
    x0 = -2 * R * u if x0 is None else np.asarray(x0, dtype=float)
    lam = gauge_scalar(field, pts) - gauge_scalar(field, x0[None])[0]
    r = np.linalg.norm(pts, axis=1)
    inner = r <= R
    plus = (~inner) & (pts @ u > 0)
    if np.any(inner):
        ti, _, _ = chord(pts[inner], u, R)
        x_in = pts[inner] + ti[:, None] * u
        for t, phi in zip(field.magnet.tori, field.fluxes):
            if phi != 0.0:
                lam[inner] += phi * segment_disk_crossings(x_in, pts[inner], t)
    if cls.kind == HOLE and np.any(plus):
        lam[plus] += sum(s * phi for s, phi in zip(cls.signature, field.fluxes))
    return lam.reshape(shape)


def gauge_lambda(field: PotentialField, cls: LineClassification, x, vhat=(0, 0, 1), x0=None,
                 method: str = "path") -> float:
    """lambda_h(x) by quadrature along the canonical path (``method="path"``) or in closed form."""
    u = unit(vhat)
    x0 = -2 * field.R * u if x0 is None else np.asarray(x0, dtype=float)
    x = np.asarray(x, dtype=float)
    gf = GaugeFunction(field, cls, u, x0)
    if method == "path":
        return gf.by_path(x)
    if not np.allclose(x, x0) and not region_mask(x[None], cls, u, field.magnet)[0]:
        raise OutsideDomain("point is not in the domain of this class")
    return float(gf(x[None])[0])
