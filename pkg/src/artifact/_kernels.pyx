# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport lgamma, exp

cnp.import_array()


cdef inline void _edge_point(int e, Py_ssize_t i, Py_ssize_t j, double[:, ::1] v, double level,
                             double[::1] xs, double spacing, double* px, double* py) noexcept nogil:
    cdef double t
    if e == 0:
        t = (level - v[i, j]) / (v[i + 1, j] - v[i, j])
        px[0] = xs[i] + t * spacing
        py[0] = xs[j]
    elif e == 1:
        t = (level - v[i + 1, j]) / (v[i + 1, j + 1] - v[i + 1, j])
        px[0] = xs[i + 1]
        py[0] = xs[j] + t * spacing
    elif e == 2:
        t = (level - v[i, j + 1]) / (v[i + 1, j + 1] - v[i, j + 1])
        px[0] = xs[i] + t * spacing
        py[0] = xs[j + 1]
    else:
        t = (level - v[i, j]) / (v[i, j + 1] - v[i, j])
        px[0] = xs[i]
        py[0] = xs[j] + t * spacing


def march_squares(values, double level, double origin, double spacing):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i, j, s = 0
    cdef double[::1] xs = origin + np.arange(n) * spacing
    out_arr = np.empty((2 * (n - 1) * (n - 1), 4))
    cdef double[:, ::1] out = out_arr
    cdef int flags[4]
    cdef int e, cnt, a1, b1, a2, b2
    cdef bint s00, s10, s11, s01, keep
    cdef double centre

    with nogil:
        for i in range(n - 1):
            for j in range(n - 1):
                s00 = v[i, j] >= level
                s10 = v[i + 1, j] >= level
                s11 = v[i + 1, j + 1] >= level
                s01 = v[i, j + 1] >= level
                flags[0] = s00 != s10
                flags[1] = s10 != s11
                flags[2] = s01 != s11
                flags[3] = s00 != s01
                cnt = flags[0] + flags[1] + flags[2] + flags[3]
                if cnt == 2:
                    a1 = -1
                    b1 = -1
                    for e in range(4):
                        if flags[e]:
                            if a1 < 0:
                                a1 = e
                            else:
                                b1 = e
                    _edge_point(a1, i, j, v, level, xs, spacing, &out[s, 0], &out[s, 1])
                    _edge_point(b1, i, j, v, level, xs, spacing, &out[s, 2], &out[s, 3])
                    s += 1
                elif cnt == 4:
                    centre = 0.25 * (((v[i, j] + v[i + 1, j]) + v[i + 1, j + 1]) + v[i, j + 1])
                    keep = s00 == (centre >= level)
                    if keep:
                        a1, b1, a2, b2 = 0, 1, 2, 3
                    else:
                        a1, b1, a2, b2 = 0, 3, 1, 2
                    _edge_point(a1, i, j, v, level, xs, spacing, &out[s, 0], &out[s, 1])
                    _edge_point(b1, i, j, v, level, xs, spacing, &out[s, 2], &out[s, 3])
                    s += 1
                    _edge_point(a2, i, j, v, level, xs, spacing, &out[s, 0], &out[s, 1])
                    _edge_point(b2, i, j, v, level, xs, spacing, &out[s, 2], &out[s, 3])
                    s += 1
    return out_arr[:s].copy()


cdef inline Py_ssize_t _index_of(int q, int k1, int k2) noexcept nogil:
    return k1 * (q + 1) - k1 * (k1 - 1) // 2 + k2


def mehler_table(int q, powers, weights):
    cdef double[:, :, ::1] pw = np.ascontiguousarray(powers, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t npts = pw.shape[2]
    cdef Py_ssize_t nk = (q + 1) * (q + 2) // 2
    out_arr = np.zeros((nk, nk))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] lf = np.array([lgamma(i + 1.0) for i in range(q + 1)])
    cdef int d[9]
    cdef int r0, r1, c0, c1, rem, a
    cdef Py_ssize_t p
    cdef double acc, prod, coef

    with nogil:
        # d[0..7] enumerated by nested bounded loops; d[8] takes the rest.
        d[0] = 0
        while d[0] <= q:
            d[1] = 0
            while d[0] + d[1] <= q:
                d[2] = 0
                while d[0] + d[1] + d[2] <= q:
                    d[3] = 0
                    while d[0] + d[1] + d[2] + d[3] <= q:
                        d[4] = 0
                        while d[0] + d[1] + d[2] + d[3] + d[4] <= q:
                            d[5] = 0
                            while d[0] + d[1] + d[2] + d[3] + d[4] + d[5] <= q:
                                d[6] = 0
                                while d[0] + d[1] + d[2] + d[3] + d[4] + d[5] + d[6] <= q:
                                    d[7] = 0
                                    rem = q - (d[0] + d[1] + d[2] + d[3] + d[4] + d[5] + d[6])
                                    while d[7] <= rem:
                                        d[8] = rem - d[7]
                                        r0 = d[0] + d[1] + d[2]
                                        r1 = d[3] + d[4] + d[5]
                                        c0 = d[0] + d[3] + d[6]
                                        c1 = d[1] + d[4] + d[7]
                                        coef = lf[r0] + lf[r1] + lf[q - r0 - r1] + lf[c0] + lf[c1] + lf[q - c0 - c1]
                                        for a in range(9):
                                            coef -= lf[d[a]]
                                        coef = exp(coef)
                                        acc = 0.0
                                        for p in range(npts):
                                            prod = pw[d[0], 0, p]
                                            for a in range(1, 9):
                                                prod = prod * pw[d[a], a, p]
                                            acc += prod * w[p]
                                        out[_index_of(q, r0, r1), _index_of(q, c0, c1)] += coef * acc
                                        d[7] += 1
                                    d[6] += 1
                                d[5] += 1
                            d[4] += 1
                        d[3] += 1
                    d[2] += 1
                d[1] += 1
            d[0] += 1
    return out_arr
