"""Run configuration: a JSON document validated into typed objects."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

import numpy as np

from .errors import ConfigError, SchemaError
from .geometry import BallComponent, MagnetAssembly, TorusComponent
from .potential import COMPACTIFIED, SOLID_ANGLE, PotentialField, VProfile, make_field
from .quantum import GridSpec, PacketSpec, PropagatorConfig, TransverseWindow

ENV_PREFIX = "ABSIM_"


@dataclass(frozen=True)
class ZPolicy:
    """Transition point Z: fixed, or Z = v**rho."""

    kind: str = "power"
    rho: float = 0.5
    Z: float = 0.0

    def __call__(self, v: float) -> float:
        return self.Z if self.kind == "fixed" else float(v) ** self.rho


@dataclass
class SimConfig:
    magnet: MagnetAssembly
    fluxes: list
    packets: list
    grid: GridSpec
    propagator: PropagatorConfig = field(default_factory=PropagatorConfig)
    v_profile: VProfile = field(default_factory=VProfile)
    gauge: str = COMPACTIFIED
    direction: tuple = (0.0, 0.0, 1.0)
    velocities: list = field(default_factory=list)
    z_samples: list = field(default_factory=list)
    z_start: Optional[float] = None
    z_policy: ZPolicy = field(default_factory=ZPolicy)
    L: float = 2.0
    plane: Optional[float] = None
    seed: int = 0
    output: str = "out"

    def potential(self, fluxes=None) -> PotentialField:
        return make_field(self.magnet, list(self.fluxes if fluxes is None else fluxes), self.gauge,
                          v_profile=self.v_profile)

    def packet_specs(self, speed: float) -> list:
        u = np.asarray(self.direction, dtype=float)
        u = u / np.linalg.norm(u)
        return [replace(p, velocity=tuple(speed * u)) for p in self.packets]

    def with_fluxes(self, fluxes) -> "SimConfig":
        return replace(self, fluxes=list(fluxes))


# ---------------------------------------------------------------- schema helpers

def _get(doc: dict, key: str, path: str, default: Any = ConfigError):
    if not isinstance(doc, dict):
        raise SchemaError(path, "expected an object")
    if key not in doc:
        if default is ConfigError:
            raise SchemaError(f"{path}.{key}", "missing required field")
        return default
    return doc[key]


def _number(value, path: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, "expected a number")
    if not np.isfinite(value) or (positive and value <= 0):
        raise SchemaError(path, "expected a positive finite number" if positive else "expected a finite number")
    return float(value)


def _vector(value, path: str, n: int = 3) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise SchemaError(path, f"expected a list of {n} numbers")
    return tuple(_number(x, f"{path}[{i}]") for i, x in enumerate(value))


def _wrap(path: str, build):
    """Run a constructor and re-raise its validation errors against a config path."""
    try:
        return build()
    except SchemaError:
        raise
    except (ConfigError, ValueError) as e:
        raise SchemaError(path, str(e)) from None


def _magnet(doc, path) -> MagnetAssembly:
    comps = _get(doc, "components", path)
    if not isinstance(comps, list) or not comps:
        raise SchemaError(f"{path}.components", "expected a non-empty list")
    built = []
    for i, c in enumerate(comps):
        p = f"{path}.components[{i}]"
        kind = _get(c, "type", p)
        if kind == "torus":
            built.append(_wrap(p, lambda c=c, p=p: TorusComponent(
                _vector(_get(c, "center", p), p + ".center"),
                _vector(_get(c, "axis", p), p + ".axis"),
                _number(_get(c, "major_radius", p), p + ".major_radius", True),
                _number(_get(c, "minor_radius", p), p + ".minor_radius", True),
                int(_get(c, "orientation", p, 1)))))
        elif kind == "ball":
            built.append(_wrap(p, lambda c=c, p=p: BallComponent(
                _vector(_get(c, "center", p), p + ".center"),
                _number(_get(c, "radius", p), p + ".radius", True))))
        else:
            raise SchemaError(p + ".type", f"unknown component type {kind!r}")
    R = _number(_get(doc, "enclosing_radius", path), path + ".enclosing_radius", True)
    return _wrap(path, lambda: MagnetAssembly(built, R))


def _packet(doc, path) -> PacketSpec:
    win = _get(doc, "window", path, None)
    window = None
    if win is not None:
        wp = path + ".window"
        window = _wrap(wp, lambda: TransverseWindow(_number(_get(win, "inner", wp), wp + ".inner"),
                                                    _number(_get(win, "outer", wp), wp + ".outer")))
    sigma = _get(doc, "sigma", path)
    sigma = _vector(sigma, path + ".sigma") if isinstance(sigma, list) else _number(sigma, path + ".sigma", True)
    trunc = _get(doc, "truncate", path, 6.0)
    trunc = None if trunc is None else _number(trunc, path + ".truncate", True)
    return PacketSpec(_vector(_get(doc, "center", path), path + ".center"), sigma,
                      truncate=trunc, window=window,
                      mass=_number(_get(doc, "mass", path, 1.0), path + ".mass", True))


def _grid(doc, path) -> GridSpec:
    shape = _get(doc, "shape", path)
    if not isinstance(shape, list) or len(shape) != 3 or not all(isinstance(n, int) for n in shape):
        raise SchemaError(path + ".shape", "expected three integers")
    ext = _vector(_get(doc, "extents", path), path + ".extents")
    origin = _get(doc, "origin", path, None)
    origin = None if origin is None else _vector(origin, path + ".origin")
    return _wrap(path, lambda: GridSpec(tuple(shape), ext, origin))


def _propagator(doc, path) -> PropagatorConfig:
    known = {f.name for f in fields(PropagatorConfig)}
    for k in doc:
        if k not in known:
            raise SchemaError(f"{path}.{k}", "unknown field")
    return _wrap(path, lambda: PropagatorConfig(**doc))


def _z_samples(value, path) -> list:
    if isinstance(value, dict):
        start = _number(_get(value, "start", path), path + ".start")
        stop = _number(_get(value, "stop", path), path + ".stop")
        count = _get(value, "count", path)
        if not isinstance(count, int) or count < 1:
            raise SchemaError(path + ".count", "expected a positive integer")
        return list(np.linspace(start, stop, count))
    if not isinstance(value, list):
        raise SchemaError(path, "expected a list or a {start, stop, count} object")
    return [_number(z, f"{path}[{i}]") for i, z in enumerate(value)]


def parse_config(doc: dict) -> SimConfig:
    magnet = _magnet(_get(doc, "magnet", "config"), "magnet")
    fluxes = _get(doc, "fluxes", "config")
    if not isinstance(fluxes, list) or len(fluxes) != len(magnet.tori):
        raise SchemaError("fluxes", "expected one flux per torus")
    fluxes = [_number(f, f"fluxes[{i}]") for i, f in enumerate(fluxes)]
    if "packets" in doc:
        packets = [_packet(p, f"packets[{i}]") for i, p in enumerate(doc["packets"])]
    else:
        packets = [_packet(_get(doc, "packet", "config"), "packet")]
    grid = _grid(_get(doc, "grid", "config"), "grid")
    prop = _propagator(_get(doc, "propagator", "config", {}), "propagator")
    vp = _get(doc, "v_profile", "config", {"kind": "none"})
    vprof = _wrap("v_profile", lambda: VProfile(**vp))
    gauge = _get(doc, "gauge", "config", COMPACTIFIED)
    if gauge not in (COMPACTIFIED, SOLID_ANGLE):
        raise SchemaError("gauge", f"unknown gauge {gauge!r}")
    vel = [_number(v, f"velocities[{i}]", True) for i, v in enumerate(_get(doc, "velocities", "config", []))]
    if any(b <= a for a, b in zip(vel[:-1], vel[1:])):
        raise SchemaError("velocities", "must be strictly increasing")
    zp = _get(doc, "z_policy", "config", {"kind": "power", "rho": 0.5})
    if zp.get("kind") not in ("power", "fixed"):
        raise SchemaError("z_policy.kind", "expected 'power' or 'fixed'")
    if zp.get("kind") == "power" and not 0 < zp.get("rho", 0.5) < 1:
        raise SchemaError("z_policy.rho", "expected 0 < rho < 1")
    z_start = _get(doc, "z_start", "config", None)
    plane = _get(doc, "plane", "config", None)
    seed = _get(doc, "seed", "config", 0)
    if not isinstance(seed, int) or seed < 0:
        raise SchemaError("seed", "expected a non-negative integer")
    return SimConfig(
        magnet=magnet, fluxes=fluxes, packets=packets, grid=grid, propagator=prop, v_profile=vprof,
        gauge=gauge, direction=_vector(_get(doc, "direction", "config", [0, 0, 1]), "direction"),
        velocities=vel, z_samples=_z_samples(_get(doc, "z_samples", "config", []), "z_samples"),
        z_start=None if z_start is None else _number(z_start, "z_start"),
        z_policy=ZPolicy(**zp), L=_number(_get(doc, "L", "config", 2.0), "L", True),
        plane=None if plane is None else _number(plane, "plane"),
        seed=seed, output=str(_get(doc, "output", "config", "out")))


def env_overrides(doc: dict, environ=None) -> dict:
    """Apply ABSIM_<KEY> variables to top-level scalar entries (values parsed as JSON)."""
    import json

    environ = os.environ if environ is None else environ
    doc = dict(doc)
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX) or key in (ENV_PREFIX + "PURE_PYTHON",):
            continue
        name = key[len(ENV_PREFIX):].lower()
        try:
            doc[name] = json.loads(raw)
        except json.JSONDecodeError:
            doc[name] = raw
    return doc
