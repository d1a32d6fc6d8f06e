# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused per-row Mahalanobis distances through the
low-rank-plus-diagonal inverse, and weighted scatter accumulation.

Semantics match tfamix._speedups_py exactly; see the benchmark script for a
speed comparison of the two backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef int _cholesky_inplace(double[:, ::1] a, Py_ssize_t q) except -1:
    # Lower-triangular Cholesky of a symmetric positive definite q x q matrix.
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(q):
        s = a[j, j]
        for k in range(j):
            s -= a[j, k] * a[j, k]
        if s <= 0.0:
            raise np.linalg.LinAlgError(
                "inner q x q matrix I + B^T Psi^-1 B is singular")
        a[j, j] = sqrt(s)
        for i in range(j + 1, q):
            s = a[i, j]
            for k in range(j):
                s -= a[i, k] * a[j, k]
            a[i, j] = s / a[j, j]
    return 0


def mahalanobis_many(double[:, ::1] resid, double[:, ::1] loadings,
                     double[::1] error_diag):
    """Squared Mahalanobis distances r^T (BB^T + Psi)^-1 r for each row r."""
    cdef Py_ssize_t n = resid.shape[0]
    cdef Py_ssize_t p = resid.shape[1]
    cdef Py_ssize_t q = loadings.shape[1]
    cdef Py_ssize_t i, j, k, h

    inner_arr = np.eye(q)
    cdef double[:, ::1] inner = inner_arr
    cdef double[::1] inv_psi = np.empty(p)
    for h in range(p):
        inv_psi[h] = 1.0 / error_diag[h]

    # inner = I + B^T Psi^-1 B (upper triangle computed, then mirrored)
    for j in range(q):
        for k in range(j, q):
            for h in range(p):
                inner[j, k] += loadings[h, j] * inv_psi[h] * loadings[h, k]
            inner[k, j] = inner[j, k]
    _cholesky_inplace(inner, q)

    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double[::1] t = np.empty(q)
    cdef double acc, s, zh
    for i in range(n):
        acc = 0.0
        for k in range(q):
            t[k] = 0.0
        for h in range(p):
            zh = resid[i, h] * inv_psi[h]
            acc += zh * resid[i, h]
            for k in range(q):
                t[k] += zh * loadings[h, k]
        # forward solve L y = t; delta -= ||y||^2
        for j in range(q):
            s = t[j]
            for k in range(j):
                s -= inner[j, k] * t[k]
            t[j] = s / inner[j, j]
            acc -= t[j] * t[j]
        out[i] = acc
    return out_arr


def weighted_scatter(double[:, ::1] resid, double[::1] weights):
    """Sum_j w_j r_j r_j^T as a symmetric (p, p) matrix (unnormalized)."""
    cdef Py_ssize_t n = resid.shape[0]
    cdef Py_ssize_t p = resid.shape[1]
    cdef Py_ssize_t i, a, b
    cdef double wa

    out_arr = np.zeros((p, p))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for a in range(p):
            wa = weights[i] * resid[i, a]
            for b in range(a, p):
                out[a, b] += wa * resid[i, b]
    for a in range(p):
        for b in range(a + 1, p):
            out[b, a] = out[a, b]
    return out_arr
