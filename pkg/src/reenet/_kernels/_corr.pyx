# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled masked-Pearson kernel.

A "cell" is one (country, year) slot of a product's trade-marginal series.
A pair correlation uses only cells where at least one of the two series is
nonzero; cells that are zero on both sides carry no co-movement information.
Returns NaN when fewer than 3 cells survive or either masked series has zero
variance.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, NAN

cnp.import_array()


cdef double _pair(const double[::1] x, const double[::1] y) noexcept nogil:
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t i, n = 0
    cdef double sx = 0.0, sy = 0.0
    cdef double mx, my, dx, dy
    cdef double vx = 0.0, vy = 0.0, cov = 0.0

    for i in range(m):
        if x[i] != 0.0 or y[i] != 0.0:
            n += 1
            sx += x[i]
            sy += y[i]
    if n < 3:
        return NAN
    mx = sx / n
    my = sy / n
    for i in range(m):
        if x[i] != 0.0 or y[i] != 0.0:
            dx = x[i] - mx
            dy = y[i] - my
            vx += dx * dx
            vy += dy * dy
            cov += dx * dy
    if vx <= 0.0 or vy <= 0.0:
        return NAN
    return cov / sqrt(vx * vy)


def masked_pearson(const double[::1] x, const double[::1] y):
    """Pearson over cells where x or y is nonzero; NaN if undefined."""
    if x.shape[0] != y.shape[0]:
        raise ValueError("series length mismatch")
    return _pair(x, y)


def masked_pearson_batch(const double[::1] x, const double[:, ::1] ys):
    """Row-wise masked Pearson of x against each row of ys."""
    if ys.shape[1] != x.shape[0]:
        raise ValueError("series length mismatch")
    cdef Py_ssize_t k = ys.shape[0]
    out = np.empty(k, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(k):
            out_v[i] = _pair(x, ys[i])
    return out
