"""Magnet models and classification of straight lines by the holes they thread.

A magnet is a union of disjoint solid tori (circular core) and balls inside an
enclosing ball of radius R.  A line that avoids the magnet is labelled by the
vector of its linking numbers with the torus core circles, computed by counting
signed crossings of the flat disk spanned by each core circle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ClassMismatch, ConfigError, Degenerate

TANGENT_TOL = 1e-9
UNIT_TOL = 1e-12


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


def _vec3(v, name) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise ConfigError(f"{name} must have three components")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite coordinates")
    return a


def orthonormal_frame(n) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``n`` to a right-handed orthonormal basis."""
    n = unit(n)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = unit(np.cross(n, helper))
    e2 = np.cross(n, e1)
    return e1, e2


@dataclass(frozen=True)
class TorusComponent:
    center: np.ndarray
    axis: np.ndarray
    major_radius: float
    minor_radius: float
    orientation: int = 1

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        axis = _vec3(self.axis, "axis")
        object.__setattr__(self, "axis", unit(axis))
        if not self.major_radius > 0:
            raise ConfigError("major_radius must be positive")
        if not 0 < self.minor_radius < self.major_radius:
            raise ConfigError("minor_radius must satisfy 0 < r < a")
        if self.orientation not in (1, -1):
            raise ConfigError("orientation must be +1 or -1")

    @property
    def normal(self) -> np.ndarray:
        """Oriented normal of the spanning disk (right-hand rule on the core circle)."""
        return self.orientation * self.axis

    def core_points(self, n: int) -> np.ndarray:
        """``n`` equally spaced points along the core circle in its traversal sense."""
        e1, e2 = orthonormal_frame(self.normal)
        phi = 2 * np.pi * np.arange(n) / n
        return self.center + self.major_radius * (np.outer(np.cos(phi), e1) + np.outer(np.sin(phi), e2))

    def core_distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the core circle."""
        w = np.asarray(points, dtype=float) - self.center
        h = w @ self.axis
        rho = np.linalg.norm(w - h[..., None] * self.axis, axis=-1)
        return np.hypot(h, rho - self.major_radius)

    def contains(self, points) -> np.ndarray:
        return self.core_distance(points) <= self.minor_radius

    def extent(self) -> float:
        """Largest distance from the origin to a point of the solid."""
        pts = self.core_points(720)
        return float(np.max(np.linalg.norm(pts, axis=1))) + self.minor_radius


@dataclass(frozen=True)
class BallComponent:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        if not self.radius > 0:
            raise ConfigError("radius must be positive")

    def contains(self, points) -> np.ndarray:
        return np.linalg.norm(np.asarray(points, dtype=float) - self.center, axis=-1) <= self.radius

    def extent(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius


Component = Union[TorusComponent, BallComponent]


def _circle_circle_gap(t1: TorusComponent, t2: TorusComponent, n: int = 2048) -> float:
    pts = t1.core_points(n)
    return float(np.min(t2.core_distance(pts))) - t1.minor_radius - t2.minor_radius


def _component_gap(c1: Component, c2: Component) -> float:
    if isinstance(c1, BallComponent) and isinstance(c2, BallComponent):
        return float(np.linalg.norm(c1.center - c2.center)) - c1.radius - c2.radius
    if isinstance(c1, TorusComponent) and isinstance(c2, TorusComponent):
        return min(_circle_circle_gap(c1, c2), _circle_circle_gap(c2, c1))
    t, b = (c1, c2) if isinstance(c1, TorusComponent) else (c2, c1)
    return float(t.core_distance(b.center)) - t.minor_radius - b.radius


@dataclass(frozen=True)
class MagnetAssembly:
    components: tuple
    enclosing_radius: float

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        R = float(self.enclosing_radius)
        object.__setattr__(self, "enclosing_radius", R)
        if not R > 0:
            raise ConfigError("enclosing_radius must be positive")
        for c in comps:
            if not isinstance(c, (TorusComponent, BallComponent)):
                raise ConfigError("components must be tori or balls")
            if c.extent() >= R:
                raise ConfigError("every component must lie inside the enclosing ball")
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                if _component_gap(comps[i], comps[j]) <= 0:
                    raise ConfigError(f"components {i} and {j} intersect")

    @property
    def tori(self) -> list[TorusComponent]:
        return [c for c in self.components if isinstance(c, TorusComponent)]

    @property
    def balls(self) -> list[BallComponent]:
        return [c for c in self.components if isinstance(c, BallComponent)]

    def contains(self, points) -> np.ndarray:
        """True where a point lies in the closed magnet K."""
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1], dtype=bool)
        for c in self.components:
            out |= c.contains(pts)
        return out

    def distance_bound(self, points) -> np.ndarray:
        """Distance from each point to K (exact for these component shapes)."""
        pts = np.asarray(points, dtype=float)
        d = np.full(pts.shape[:-1], np.inf)
        for c in self.components:
            if isinstance(c, TorusComponent):
                d = np.minimum(d, c.core_distance(pts) - c.minor_radius)
            else:
                d = np.minimum(d, np.linalg.norm(pts - c.center, axis=-1) - c.radius)
        return np.maximum(d, 0.0)

    def extent(self) -> float:
        return max((c.extent() for c in self.components), default=0.0)

    def with_radius(self, R: float) -> "MagnetAssembly":
        return MagnetAssembly(self.components, R)


@dataclass(frozen=True)
class OrientedLine:
    base: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", _vec3(self.base, "base"))
        object.__setattr__(self, "direction", unit(_vec3(self.direction, "direction")))

    def reversed(self) -> "OrientedLine":
        return OrientedLine(self.base, -self.direction)

    def at(self, tau: float) -> np.ndarray:
        return self.base + tau * self.direction


HIT, OUT, HOLE = "hit", "out", "hole"


@dataclass(frozen=True)
class LineClassification:
    kind: str
    signature: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in (HIT, OUT, HOLE):
            raise ValueError(f"unknown classification {self.kind!r}")
        sig = tuple(int(s) for s in self.signature)
        object.__setattr__(self, "signature", sig)
        if self.kind == HOLE and not any(sig):
            raise ValueError("a hole signature must be nonzero")
        if self.kind == OUT and any(sig):
            raise ValueError("the out class has an all-zero signature")

    @classmethod
    def hole(cls, signature: Sequence[int]) -> "LineClassification":
        return cls(HOLE, tuple(signature))

    @classmethod
    def out(cls, n_tori: int) -> "LineClassification":
        return cls(OUT, (0,) * n_tori)

    @property
    def is_hit(self) -> bool:
        return self.kind == HIT

    def label(self) -> str:
        if self.kind == HOLE:
            return "hole[" + ",".join(f"{s:+d}" for s in self.signature) + "]"
        return self.kind

    @classmethod
    def from_label(cls, label: str, n_tori: int) -> "LineClassification":
        if label == OUT:
            return cls.out(n_tori)
        if label == HIT:
            return cls(HIT)
        if label.startswith("hole[") and label.endswith("]"):
            return cls.hole([int(s) for s in label[5:-1].split(",")])
        raise ValueError(f"bad class label {label!r}")


# ---------------------------------------------------------------- vectorized core

def _as_lines(points, direction):
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinates")
    u = unit(direction)
    return pts, u, single


def disk_crossings(points, direction, torus: TorusComponent) -> np.ndarray:
    """Signed crossing count of each full line with the torus spanning disk.

    Raises Degenerate when a line lies in the disk plane and passes over the disk.
    """
    pts, u, _ = _as_lines(points, direction)
    n = torus.normal
    denom = float(u @ n)
    h = (torus.center - pts) @ n
    if abs(denom) < TANGENT_TOL:
        # parallel to the disk plane: only in-plane lines are ambiguous
        w = pts - torus.center
        wp = w - np.outer(w @ u, u)
        inplane = (np.abs(h) < TANGENT_TOL) & (np.linalg.norm(wp, axis=1) < torus.major_radius)
        if np.any(inplane):
            raise Degenerate("line lies in the spanning disk plane")
        return np.zeros(len(pts), dtype=np.int64)
    tau = h / denom
    hit = pts + tau[:, None] * u - torus.center
    inside = np.linalg.norm(hit, axis=1) < torus.major_radius
    return np.where(inside, int(np.sign(denom)), 0).astype(np.int64)


def line_core_distance(points, direction, torus: TorusComponent, samples: int = 256,
                       chunk: int = 4096) -> np.ndarray:
    """Minimum distance between each line and the core circle.

    Coarse sampling of the circle parameter brackets the global minimum, then a
    vectorized golden-section search refines it to 1e-12 in the parameter.
    """
    pts, u, _ = _as_lines(points, direction)
    if len(pts) > chunk:
        return np.concatenate([line_core_distance(pts[i:i + chunk], u, torus, samples, chunk)
                               for i in range(0, len(pts), chunk)])
    e1, e2 = orthonormal_frame(torus.normal)
    a = torus.major_radius
    w = pts - torus.center
    # distance from a circle point to the line only depends on components normal to u
    wp = w - np.outer(w @ u, u)
    e1p = e1 - (e1 @ u) * u
    e2p = e2 - (e2 @ u) * u

    phis = 2 * np.pi * np.arange(samples) / samples
    ring = a * (np.outer(np.cos(phis), e1p) + np.outer(np.sin(phis), e2p))
    coarse = np.einsum("ijk,ijk->ij", ring[None] - wp[:, None], ring[None] - wp[:, None])
    k = np.argmin(coarse, axis=1)
    step = 2 * np.pi / samples
    lo = phis[k] - step
    hi = phis[k] + step
    g = (np.sqrt(5.0) - 1) / 2
    x1 = hi - g * (hi - lo)
    x2 = lo + g * (hi - lo)
    f1 = _d2(x1, a, e1p, e2p, wp)
    f2 = _d2(x2, a, e1p, e2p, wp)
    while np.max(hi - lo) > 1e-12:
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        # the surviving interior point is reused; only one new evaluation per line
        x1n = np.where(left, hi - g * (hi - lo), x2)
        x2n = np.where(left, x1, lo + g * (hi - lo))
        fnew_at = np.where(left, x1n, x2n)
        fnew = _d2(fnew_at, a, e1p, e2p, wp)
        f1, f2 = np.where(left, fnew, f2), np.where(left, f1, fnew)
        x1, x2 = x1n, x2n
    best = np.minimum(np.minimum(f1, f2), np.min(coarse, axis=1))
    return np.sqrt(np.maximum(best, 0.0))


def _d2(phi, a, e1p, e2p, w_perp):
    d = a * (np.cos(phi)[:, None] * e1p + np.sin(phi)[:, None] * e2p) - w_perp
    return np.einsum("ij,ij->i", d, d)


def line_hits(points, direction, magnet: MagnetAssembly) -> np.ndarray:
    """True where the line meets the closed magnet."""
    pts, u, _ = _as_lines(points, direction)
    hit = np.zeros(len(pts), dtype=bool)
    for c in magnet.components:
        if isinstance(c, BallComponent):
            w = pts - c.center
            d = np.linalg.norm(w - np.outer(w @ u, u), axis=1)
            hit |= d <= c.radius
        else:
            # lines far from the torus cannot hit it; skip the search for them
            w = pts - c.center
            d_center = np.linalg.norm(w - np.outer(w @ u, u), axis=1)
            near = (~hit) & (d_center <= c.major_radius + c.minor_radius)
            if np.any(near):
                hit[near] |= line_core_distance(pts[near], u, c) <= c.minor_radius
    return hit


def classify_lines(points, direction, magnet: MagnetAssembly) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized classification.

    Returns ``(hit, signatures)``: a boolean array and an integer array of shape
    (n_lines, n_tori).  Rows with ``hit`` set carry meaningless signatures.
    """
    pts, u, _ = _as_lines(points, direction)
    hit = line_hits(pts, u, magnet)
    sig = np.zeros((len(pts), len(magnet.tori)), dtype=np.int64)
    ok = ~hit
    for j, t in enumerate(magnet.tori):
        if np.any(ok):
            sig[ok, j] = disk_crossings(pts[ok], u, t)
    return hit, sig


def classify_line(line: OrientedLine, magnet: MagnetAssembly) -> LineClassification:
    hit, sig = classify_lines(line.base, line.direction, magnet)
    if hit[0]:
        return LineClassification(HIT)
    s = tuple(int(v) for v in sig[0])
    return LineClassification.hole(s) if any(s) else LineClassification.out(len(s))


def linking_number(line: OrientedLine, torus: TorusComponent) -> int:
    return int(disk_crossings(line.base, line.direction, torus)[0])


def same_class(a: OrientedLine, b: OrientedLine, magnet: MagnetAssembly) -> bool:
    ca = classify_line(a, magnet)
    cb = classify_line(b, magnet)
    if ca.is_hit or cb.is_hit:
        raise ClassMismatch("a line meets the magnet")
    return ca.signature == cb.signature


def region_mask(points, cls: LineClassification, vhat, magnet: MagnetAssembly) -> np.ndarray:
    """Vectorized membership in the domain attached to a Hole or Out class."""
    if cls.is_hit:
        raise ClassMismatch("no domain is attached to the hit class")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    u = unit(vhat)
    R = magnet.enclosing_radius
    r = np.linalg.norm(pts, axis=1)
    outside = r > R
    if cls.kind == OUT:
        mask = outside.copy()
    else:
        mask = outside & (pts @ u != 0.0)
    inner = ~outside
    if np.any(inner):
        hit, sig = classify_lines(pts[inner], u, magnet)
        want = np.asarray(cls.signature, dtype=np.int64)
        mask[inner] = (~hit) & np.all(sig == want, axis=1)
    return mask


def in_region_C(x, cls: LineClassification, vhat, magnet: MagnetAssembly) -> bool:
    return bool(region_mask(np.asarray(x, dtype=float)[None, :], cls, vhat, magnet)[0])


def chord(points, direction, R: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entry and exit parameters of each line through the closed ball of radius R.

    Returns ``(tau_in, tau_out, meets)`` with parameters relative to the base point.
    """
    pts, u, _ = _as_lines(points, direction)
    b = pts @ u
    c = np.einsum("ij,ij->i", pts, pts) - R * R
    disc = b * b - c
    meets = disc >= 0
    s = np.sqrt(np.where(meets, disc, 0.0))
    return -b - s, -b + s, meets


# ---------------------------------------------------------------- linking oracle

def _segment_pair_linking(p, q):
    """Exact Gauss linking of two closed polygons (solid-angle formula per segment pair)."""
    total = 0.0
    p1 = p
    p2 = np.roll(p, -1, axis=0)
    q1 = q
    q2 = np.roll(q, -1, axis=0)
    for i in range(len(p1)):
        r13 = q1 - p1[i]
        r14 = q2 - p1[i]
        r23 = q1 - p2[i]
        r24 = q2 - p2[i]
        faces = [(r13, r14, r24), (r14, r24, r23), (r24, r23, r13), (r23, r13, r14)]
        omega = np.zeros(len(q1))
        ok = np.ones(len(q1), dtype=bool)
        normals = []
        for a, b, _ in faces:
            n = np.cross(a, b)
            nn = np.linalg.norm(n, axis=1)
            ok &= nn > 1e-300
            normals.append(n / np.where(nn > 0, nn, 1.0)[:, None])
        for k in range(4):
            d = np.clip(np.einsum("ij,ij->i", normals[k], normals[(k + 1) % 4]), -1.0, 1.0)
            omega += np.arcsin(d)
        r34 = q2 - q1
        r12 = p2[i] - p1[i]
        sgn = np.sign(np.einsum("ij,ij->i", np.cross(r34, np.broadcast_to(r12, r34.shape)), r13))
        total += np.sum(np.where(ok, omega * sgn, 0.0))
    return total / (4 * np.pi)


def closed_curve(line: OrientedLine, R: float, n_segment: int = 64, n_arc: int = 64) -> np.ndarray:
    """Polygon for the segment of the line inside B_R closed by an arc on the sphere."""
    t_in, t_out, meets = chord(line.base, line.direction, R)
    if not meets[0]:
        raise ValueError("line does not meet the enclosing ball")
    x_in = line.at(t_in[0])
    x_out = line.at(t_out[0])
    seg = x_in + np.linspace(0, 1, n_segment, endpoint=False)[:, None] * (x_out - x_in)
    a = x_out / R
    b = x_in / R
    # great-circle arc from x_out back to x_in; pick any plane if they are antipodal
    cosang = float(np.clip(a @ b, -1, 1))
    perp = b - cosang * a
    if np.linalg.norm(perp) < 1e-9:
        perp = orthonormal_frame(a)[0]
    perp = unit(perp)
    ang = np.arccos(cosang) if np.linalg.norm(b - cosang * a) >= 1e-9 else np.pi
    th = np.linspace(0, ang, n_arc, endpoint=False)
    arc = R * (np.outer(np.cos(th), a) + np.outer(np.sin(th), perp))
    return np.vstack([seg, arc])


def gauss_linking(line: OrientedLine, torus: TorusComponent, R: float, n: int = 256) -> float:
    """Numerical Gauss linking integral of the closed curve c(x, v) with the core circle."""
    return _segment_pair_linking(closed_curve(line, R, n, n), torus.core_points(n))
