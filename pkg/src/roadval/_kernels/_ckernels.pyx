# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-ring kernels; see ``_fallback.py`` for the reference semantics."""

import numpy as np
from libc.math cimport sqrt, atan2, fabs, hypot, floor, INFINITY


def knn_mean_distance(xyz, int k):
    cdef const double[:, ::1] p = np.ascontiguousarray(xyz, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    best_arr = np.empty(k)
    cdef double[::1] best = best_arr
    cdef Py_ssize_t i, j, m
    cdef double dx, dy, dz, d, s
    for i in range(n):
        for m in range(k):
            best[m] = INFINITY
        for j in range(n):
            if j == i:
                continue
            dx = p[i, 0] - p[j, 0]
            dy = p[i, 1] - p[j, 1]
            dz = p[i, 2] - p[j, 2]
            d = sqrt(dx * dx + dy * dy + dz * dz)
            if d < best[k - 1]:
                m = k - 1
                while m > 0 and best[m - 1] > d:
                    best[m] = best[m - 1]
                    m -= 1
                best[m] = d
        s = 0.0
        for m in range(k):
            s += best[m]
        out[i] = s / k
    return out_arr


cdef double _median(double* buf, Py_ssize_t n) nogil:
    # insertion sort; windows are tiny
    cdef Py_ssize_t a, b
    cdef double v
    for a in range(1, n):
        v = buf[a]
        b = a
        while b > 0 and buf[b - 1] > v:
            buf[b] = buf[b - 1]
            b -= 1
        buf[b] = v
    return buf[n // 2]


def ring_median(xyz, int window):
    cdef const double[:, ::1] p = np.ascontiguousarray(xyz, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    out_arr = np.array(p, copy=True)
    cdef double[:, ::1] out = out_arr
    buf_arr = np.empty(window)
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t h = window // 2
    cdef Py_ssize_t i, c, j, hi
    for i in range(n):
        hi = h
        if i < hi:
            hi = i
        if n - 1 - i < hi:
            hi = n - 1 - i
        if hi == 0:
            continue
        for c in range(3):
            for j in range(2 * hi + 1):
                buf[j] = p[i - hi + j, c]
            out[i, c] = _median(&buf[0], 2 * hi + 1)
    return out_arr


cdef inline double _angle(const double[:, ::1] p, Py_ssize_t i) nogil:
    return atan2(fabs(p[i + 1, 2] - p[i, 2]), hypot(p[i + 1, 0] - p[i, 0], p[i + 1, 1] - p[i, 1]))


def smoothness_walk(xyz, Py_ssize_t seed, double threshold):
    cdef const double[:, ::1] p = np.ascontiguousarray(xyz, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    if n == 0:
        return (seed, seed)
    cdef Py_ssize_t hi = seed, lo = seed
    while hi + 1 < n and not (_angle(p, hi) > threshold):
        hi += 1
    while lo > 0 and not (_angle(p, lo - 1) > threshold):
        lo -= 1
    return (int(hi), int(lo))


def project_to_pixels(points, rot, trans, double fx, double fy, double ox, double oy, long width, long height):
    cdef const double[:, ::1] p = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    cdef const double[:, ::1] r = np.ascontiguousarray(rot, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(trans, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    rows_arr = np.empty(n, dtype=np.int64)
    cols_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] rows = rows_arr
    cdef long long[::1] cols = cols_arr
    cdef Py_ssize_t i, m = 0
    cdef double x, y, z, u, v, cu, cv
    for i in range(n):
        x = r[0, 0] * p[i, 0] + r[0, 1] * p[i, 1] + r[0, 2] * p[i, 2] + t[0]
        y = r[1, 0] * p[i, 0] + r[1, 1] * p[i, 1] + r[1, 2] * p[i, 2] + t[1]
        z = r[2, 0] * p[i, 0] + r[2, 1] * p[i, 1] + r[2, 2] * p[i, 2] + t[2]
        if not (z > 0.0):
            continue
        u = fx * x / z + ox
        v = fy * y / z + oy
        cu = floor(u + 0.5)
        cv = floor(v + 0.5)
        if cu >= 0 and cu < width and cv >= 0 and cv < height:
            rows[m] = <long long>cv
            cols[m] = <long long>cu
            m += 1
    return rows_arr[:m].copy(), cols_arr[:m].copy()
