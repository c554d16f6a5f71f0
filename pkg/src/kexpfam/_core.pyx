# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pairwise kernel-derivative loops.

Same contract as ``kexpfam._core_py``; see that module for the meaning of
the arguments and outputs.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, pow

cnp.import_array()


cdef inline void _phi(int code, double p1, double p2, double s, double* out) noexcept nogil:
    cdef double a, e, q, base, coef
    cdef int k
    if code == 1:
        q = 1.0 / (p1 * p1)
        base = 1.0 + q * s
        coef = 1.0
        for k in range(5):
            out[k] = coef * pow(q, k) * pow(base, -p2 - k)
            coef *= -p2 - k
    else:
        a = -0.5 / (p1 * p1)
        e = exp(a * s)
        out[0] = e
        out[1] = a * e
        out[2] = a * a * e
        out[3] = a * a * a * e
        out[4] = a * a * a * a * e


def pair_terms(X, int code, double p1, double p2, double r, double c):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    G_arr = np.empty((n * d, n * d), dtype=np.float64)
    tsum_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] G = G_arr
    cdef double[:, ::1] tsum = tsum_arr
    cdef double s4sum = 0.0
    cdef double ph[5]
    cdef double u[64]
    cdef double* ubuf = u
    cdef Py_ssize_t a, b, i, j, k
    cdef double s, t, val, kt, dd = <double>d
    cdef object heap = None
    if d > 64:
        heap = np.empty(d, dtype=np.float64)
        ubuf = <double*> cnp.PyArray_DATA(heap)
    with nogil:
        for a in range(n):
            for b in range(n):
                s = 0.0
                t = c
                for k in range(d):
                    ubuf[k] = x[a, k] - x[b, k]
                    s += ubuf[k] * ubuf[k]
                    t += x[a, k] * x[b, k]
                _phi(code, p1, p2, s, ph)
                for i in range(d):
                    for j in range(d):
                        val = -4.0 * ubuf[i] * ubuf[j] * ph[2]
                        if i == j:
                            val -= 2.0 * ph[1]
                        if r != 0.0:
                            val += 2.0 * r * x[a, j] * x[b, i]
                            if i == j:
                                val += 2.0 * r * t
                        G[a * d + i, b * d + j] = val
                kt = 4.0 * (dd + 2.0) * ph[2] + 8.0 * s * ph[3]
                for j in range(d):
                    tsum[b, j] += -ubuf[j] * kt + 4.0 * r * x[b, j]
                s4sum += ((4.0 * dd * dd + 8.0 * dd) * ph[2] + (16.0 * dd + 32.0) * s * ph[3]
                          + 16.0 * s * s * ph[4] + 4.0 * r * dd)
    return G_arr, tsum_arr, s4sum


def model_terms(Z, X, W, double v, int code, double p1, double p2, double r, double c):
    cdef const double[:, ::1] z = np.ascontiguousarray(Z, dtype=np.float64)
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t m = z.shape[0], d = z.shape[1], n = x.shape[0]
    f_arr = np.zeros(m, dtype=np.float64)
    grad_arr = np.zeros((m, d), dtype=np.float64)
    lap_arr = np.zeros((m, d), dtype=np.float64)
    cdef double[::1] f = f_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, ::1] lap = lap_arr
    cdef double ph[5]
    cdef double u[64]
    cdef double* ubuf = u
    cdef object heap = None
    cdef Py_ssize_t p, b, k
    cdef double s, t, wu, wz, k2, dd = <double>d, common, quad
    if d > 64:
        heap = np.empty(d, dtype=np.float64)
        ubuf = <double*> cnp.PyArray_DATA(heap)
    with nogil:
        for p in range(m):
            for b in range(n):
                s = 0.0
                wu = 0.0
                t = c
                wz = 0.0
                for k in range(d):
                    ubuf[k] = z[p, k] - x[b, k]
                    s += ubuf[k] * ubuf[k]
                    wu += ubuf[k] * w[b, k]
                    t += z[p, k] * x[b, k]
                    wz += w[b, k] * z[p, k]
                _phi(code, p1, p2, s, ph)
                k2 = 4.0 * (dd + 2.0) * ph[2] + 8.0 * s * ph[3]
                f[p] += -2.0 * wu * ph[1] + v * (2.0 * dd * ph[1] + 4.0 * s * ph[2])
                common = -4.0 * wu * ph[2] + v * k2
                quad = -8.0 * wu * ph[3] + v * (8.0 * (dd + 4.0) * ph[3] + 16.0 * s * ph[4])
                for k in range(d):
                    grad[p, k] += -2.0 * w[b, k] * ph[1] + ubuf[k] * common
                    lap[p, k] += (-8.0 * ubuf[k] * w[b, k] * ph[2] + common
                                  + ubuf[k] * ubuf[k] * quad)
                if r != 0.0:
                    f[p] += 2.0 * r * t * wz
                    for k in range(d):
                        grad[p, k] += 2.0 * r * (x[b, k] * wz + t * w[b, k])
                        lap[p, k] += 4.0 * r * x[b, k] * w[b, k]
            if r != 0.0:
                quad = 0.0
                for k in range(d):
                    quad += z[p, k] * z[p, k]
                f[p] += 2.0 * r * v * n * quad
                for k in range(d):
                    grad[p, k] += 4.0 * r * v * n * z[p, k]
                    lap[p, k] += 4.0 * r * v * n
    return f_arr, grad_arr, lap_arr
