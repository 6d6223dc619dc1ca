"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 64] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from absim import kernels


def peierls_case(n, rng):
    psi = (rng.standard_normal((n, n, n)) + 1j * rng.standard_normal((n, n, n)))
    links = np.exp(1j * rng.uniform(-1, 1, (3, n, n, n)))
    coeffs = np.array([-2.5, 4 / 3, -1 / 12])
    inv_dx2 = np.full(3, 1 / 0.25 ** 2)
    return lambda impl: kernels.peierls_apply(psi, links, coeffs, inv_dx2, impl=impl)


def biot_savart_case(n, rng):
    pts = rng.uniform(-4, 4, (n ** 3 // 8, 3))
    s = np.linspace(0, 2 * np.pi, 257)
    nodes = np.stack([2 * np.cos(s[:-1]), 2 * np.sin(s[:-1]), 0 * s[:-1]], axis=1)
    dl = np.roll(nodes, -1, axis=0) - nodes
    return lambda impl: kernels.biot_savart(pts, nodes, dl, impl=impl)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    impls = kernels.implementations()
    if "cython" not in impls:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'kernel':<14}{'backend':<10}{'best [ms]':>12}{'speedup':>10}")
    for name, case in (("peierls_apply", peierls_case), ("biot_savart", biot_savart_case)):
        run = case(args.n, rng)
        ref = run(impls["python"])
        times = {}
        for backend, impl in impls.items():
            if not np.allclose(run(impl), ref, rtol=1e-10, atol=1e-10):
                raise SystemExit(f"{name}: {backend} disagrees with the fallback")
            times[backend] = min(timeit.repeat(lambda: run(impl), number=1, repeat=args.repeat))
        for backend, t in times.items():
            print(f"{name:<14}{backend:<10}{1e3 * t:>12.2f}{times['python'] / t:>9.1f}x")


if __name__ == "__main__":
    main()
