"""Command line entry point: ``absim <command> --config PATH [--out DIR] ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ansatz import ab_total, decompose
from .errors import AbsimError, ConfigError
from .geometry import OrientedLine, classify_line, orthonormal_frame, unit
from .harness import (exact_run, fringe_experiment, initial_envelope, run_error_scan,
                      transition_compare)
from .io import load_config, write_csv, write_field
from .potential import circulation, compactify, eval_A
from .quantum import WaveField

log = logging.getLogger("absim")


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or os.environ.get("ABSIM_OUT") or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _speed(args, cfg) -> float:
    if args.velocity is not None:
        return args.velocity
    if not cfg.velocities:
        raise ConfigError("no velocity given on the command line or in the config")
    return cfg.velocities[-1]


def cmd_classify(args, cfg):
    base = np.array(args.point if args.point else [0.0, 0.0, 0.0])
    cls = classify_line(OrientedLine(base, cfg.direction), cfg.magnet)
    print(json.dumps({"base": base.tolist(), "direction": list(cfg.direction), "class": cls.label()}))


def cmd_potential(args, cfg):
    fld = cfg.potential()
    out = _out_dir(args, cfg)
    rows = []
    for j, t in enumerate(cfg.magnet.tori):
        # loop around the core circle, just outside the tube
        e1, _ = orthonormal_frame(t.normal)
        p = t.center + t.major_radius * e1
        r = min(1.5 * t.minor_radius, 0.5 * (t.minor_radius + t.major_radius))
        th = np.linspace(0, 2 * np.pi, 65)
        loop = p + r * (np.outer(np.cos(th), e1) + np.outer(np.sin(th), t.normal))
        loop[-1] = loop[0]
        rows.append((j, cfg.fluxes[j], circulation(fld, loop), circulation(compactify(fld), loop)))
    write_csv(out / "circulations.csv", ["torus", "flux", "circulation", "circulation_compactified"], rows)
    R = cfg.magnet.enclosing_radius
    pts = np.array([[0, 0, z] for z in np.linspace(-2 * R, 2 * R, 41)])
    A = eval_A(fld, pts)
    write_csv(out / "axis_potential.csv", ["x", "y", "z", "Ax", "Ay", "Az"],
              [tuple(p) + tuple(a) for p, a in zip(pts, A)])
    for r in rows:
        print(f"torus {r[0]}: flux {r[1]:.6f} circulation {r[2]:.6f} compactified {r[3]:.6f}")


def _dump_callback(args, out, grid, speed, prefix):
    if not args.dump_every:
        return None
    count = {"n": 0}

    def cb(t, data):
        count["n"] += 1
        if count["n"] % args.dump_every == 0:
            write_field(out / f"{prefix}_{count['n']:06d}.absf", WaveField(grid, data),
                        {"t": t, "speed": speed, "frame": "envelope"})
    return cb


def cmd_evolve(args, cfg):
    speed = _speed(args, cfg)
    out = _out_dir(args, cfg)
    u0 = initial_envelope(cfg, speed)
    zs = sorted(cfg.z_samples) or [3 * cfg.magnet.enclosing_radius]
    snaps, info = exact_run(cfg, speed, u0, zs, on_step=_dump_callback(args, out, cfg.grid, speed, "step"))
    for z, s in zip(zs, snaps):
        write_field(out / f"exact_z{z:+.3f}.absf", s.field, {"t": s.t, "z": z, "speed": speed, "frame": "envelope"})
    print(f"far-past mass {info['far_past_mass']:.3e}, {info['matvecs']} matvecs, {len(snaps)} snapshots")


def cmd_ansatz(args, cfg):
    speed = _speed(args, cfg)
    out = _out_dir(args, cfg)
    vel = speed * unit(cfg.direction)
    u0 = initial_envelope(cfg, speed)
    dec = decompose(u0, vel, cfg.magnet)
    fld = compactify(cfg.potential())
    for z in sorted(cfg.z_samples) or [0.0]:
        b = ab_total(dec, z / speed, fld, vel)
        write_field(out / f"ansatz_z{z:+.3f}.absf", b.total,
                    {"t": z / speed, "z": z, "speed": speed, "classes": list(b.components)})
    print(json.dumps({"classes": dec.masses(), "hit_mass": dec.hit_mass}))


def cmd_scan(args, cfg):
    out = _out_dir(args, cfg)
    curve = run_error_scan(cfg, progress=lambda r: log.info("v=%g sup error %.3e (%.0f s)", r.v, r.sup_error, r.seconds))
    write_csv(out / "scan.csv", ["v", "z", "t", "error"], curve.table())
    write_csv(out / "scan_sup.csv", ["v", "sup_error", "far_past_mass", "matvecs"],
              [(r.v, r.sup_error, r.far_past_mass, r.matvecs) for r in curve.rows])
    write_csv(out / "scan_fit.csv", ["slope", "intercept", "delta_equivalent"],
              [(curve.slope, curve.intercept, curve.delta_equivalent)])
    print(f"slope {curve.slope:.4f}")


def cmd_transition(args, cfg):
    out = _out_dir(args, cfg)
    rows = []
    for v in cfg.velocities:
        rec = transition_compare(cfg, cfg.z_policy(v), cfg.L, v)
        m = rec.maxima
        rows.append((v, rec.Z, rec.L, m["in_vs_371"], m["in_vs_372"], m["371_vs_372"]))
        print(f"v={v:g} Z={rec.Z:.3f} max difference {rec.max_difference:.3e}")
    write_csv(out / "transition.csv", ["v", "Z", "L", "in_vs_371", "in_vs_372", "371_vs_372"], rows)


def cmd_fringes(args, cfg):
    out = _out_dir(args, cfg)
    speed = _speed(args, cfg)
    plane = cfg.plane if cfg.plane is not None else 3 * cfg.magnet.enclosing_radius
    fluxes = [[f] for f in (args.flux or cfg.fluxes)]
    runs = fringe_experiment(cfg, speed, fluxes, plane, exact=not args.ansatz_only)
    write_csv(out / "fringes.csv", ["flux", "shift", "visibility", "ansatz_shift"],
              [(r.flux, r.shift, r.visibility, r.ansatz_shift) for r in runs])
    for r in runs:
        print(f"flux {r.flux:.6f}: shift {r.shift:.6f} (ansatz {r.ansatz_shift:.6f}), visibility {r.visibility:.3f}")


COMMANDS = {
    "classify": cmd_classify,
    "potential": cmd_potential,
    "evolve": cmd_evolve,
    "ansatz": cmd_ansatz,
    "scan": cmd_scan,
    "transition": cmd_transition,
    "fringes": cmd_fringes,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="absim", description="Magnetic flux phase experiments on wave packets.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--threads", type=int, default=int(os.environ.get("ABSIM_THREADS", "1")))
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--dump-every", type=int, default=0)
        s.add_argument("--velocity", type=float)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "classify":
            s.add_argument("--point", type=float, nargs=3)
        if name == "fringes":
            s.add_argument("--flux", type=float, action="append")
            s.add_argument("--ansatz-only", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, os.environ)
        if args.seed is not None:
            cfg.seed = args.seed
        np.random.seed(cfg.seed % 2 ** 32)
        import scipy.fft
        with scipy.fft.set_workers(max(1, args.threads)):
            COMMANDS[args.command](args, cfg)
    except AbsimError as e:
        print(f"absim: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
