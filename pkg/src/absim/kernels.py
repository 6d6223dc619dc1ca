"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``ABSIM_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("ABSIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def peierls_apply(psi, links, coeffs, inv_dx2, diag=None, out=None, impl=None):
    impl = impl or _impl
    psi = np.ascontiguousarray(psi, dtype=np.complex128)
    if out is None:
        out = np.empty_like(psi)
    if diag is not None:
        diag = np.ascontiguousarray(diag, dtype=np.float64)
    impl.peierls_apply(psi, np.ascontiguousarray(links, dtype=np.complex128),
                       np.ascontiguousarray(coeffs, dtype=np.float64),
                       np.ascontiguousarray(inv_dx2, dtype=np.float64), diag, out)
    return out


def biot_savart(points, nodes, dl, impl=None):
    impl = impl or _impl
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty_like(points)
    impl.biot_savart(points, np.ascontiguousarray(nodes, dtype=np.float64),
                     np.ascontiguousarray(dl, dtype=np.float64), out)
    return out


def implementations():
    """Available kernel modules keyed by backend name."""
    impls = {"python": _fallback}
    try:
        from . import _kernels

        impls["cython"] = _kernels
    except ImportError:
        pass
    return impls
