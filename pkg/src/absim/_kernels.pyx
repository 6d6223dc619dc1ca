# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: covariant finite-difference stencil and Biot-Savart sums."""
import numpy as np
from libc.math cimport sqrt


cdef extern from "complex.h" nogil:
    double complex conj(double complex)


def peierls_apply(double complex[:, :, ::1] psi, double complex[:, :, :, ::1] links,
                  double[::1] coeffs, double[::1] inv_dx2, diag, double complex[:, :, ::1] out):
    cdef Py_ssize_t n0 = psi.shape[0], n1 = psi.shape[1], n2 = psi.shape[2]
    cdef Py_ssize_t nj = coeffs.shape[0]
    cdef Py_ssize_t i, j, k, s, a, b
    cdef double complex acc, ph, v, c0psi
    cdef double w0 = -0.5 * inv_dx2[0], w1 = -0.5 * inv_dx2[1], w2 = -0.5 * inv_dx2[2]
    cdef double csum = coeffs[0] * (w0 + w1 + w2)
    cdef double[:, :, ::1] dg
    cdef bint has_diag = diag is not None and np.asarray(diag).size > 0
    if has_diag:
        dg = diag
    with nogil:
        for i in range(n0):
            for j in range(n1):
                for k in range(n2):
                    v = psi[i, j, k]
                    acc = csum * v
                    # axis 0
                    ph = 1.0
                    a = i
                    b = i
                    for s in range(1, nj):
                        ph = ph * links[0, a, j, k]
                        a = a + 1
                        if a == n0:
                            a = 0
                        acc = acc + w0 * coeffs[s] * ph * psi[a, j, k]
                    ph = 1.0
                    for s in range(1, nj):
                        b = b - 1
                        if b < 0:
                            b = n0 - 1
                        ph = ph * conj(links[0, b, j, k])
                        acc = acc + w0 * coeffs[s] * ph * psi[b, j, k]
                    # axis 1
                    ph = 1.0
                    a = j
                    b = j
                    for s in range(1, nj):
                        ph = ph * links[1, i, a, k]
                        a = a + 1
                        if a == n1:
                            a = 0
                        acc = acc + w1 * coeffs[s] * ph * psi[i, a, k]
                    ph = 1.0
                    for s in range(1, nj):
                        b = b - 1
                        if b < 0:
                            b = n1 - 1
                        ph = ph * conj(links[1, i, b, k])
                        acc = acc + w1 * coeffs[s] * ph * psi[i, b, k]
                    # axis 2
                    ph = 1.0
                    a = k
                    b = k
                    for s in range(1, nj):
                        ph = ph * links[2, i, j, a]
                        a = a + 1
                        if a == n2:
                            a = 0
                        acc = acc + w2 * coeffs[s] * ph * psi[i, j, a]
                    ph = 1.0
                    for s in range(1, nj):
                        b = b - 1
                        if b < 0:
                            b = n2 - 1
                        ph = ph * conj(links[2, i, j, b])
                        acc = acc + w2 * coeffs[s] * ph * psi[i, j, b]
                    if has_diag:
                        acc = acc + dg[i, j, k] * v
                    out[i, j, k] = acc
    return np.asarray(out)


def biot_savart(double[:, ::1] points, double[:, ::1] nodes, double[:, ::1] dl, double[:, ::1] out):
    cdef Py_ssize_t n = points.shape[0], m = nodes.shape[0]
    cdef Py_ssize_t i, q
    cdef double px, py, pz, dx, dy, dz, r2, w, ax, ay, az
    with nogil:
        for i in range(n):
            px = points[i, 0]
            py = points[i, 1]
            pz = points[i, 2]
            ax = 0.0
            ay = 0.0
            az = 0.0
            for q in range(m):
                dx = px - nodes[q, 0]
                dy = py - nodes[q, 1]
                dz = pz - nodes[q, 2]
                r2 = dx * dx + dy * dy + dz * dz
                w = 1.0 / (r2 * sqrt(r2))
                ax = ax + (dl[q, 1] * dz - dl[q, 2] * dy) * w
                ay = ay + (dl[q, 2] * dx - dl[q, 0] * dz) * w
                az = az + (dl[q, 0] * dy - dl[q, 1] * dx) * w
            out[i, 0] = ax
            out[i, 1] = ay
            out[i, 2] = az
    return np.asarray(out)
