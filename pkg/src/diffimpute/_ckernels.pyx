# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row-loop and optimizer kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def ffill_rows(values, mask):
    cdef const double[:, ::1] val = np.ascontiguousarray(values, dtype=np.float64)
    cdef const signed char[:, ::1] m = np.ascontiguousarray(np.asarray(mask) != 0, dtype=np.int8)
    cdef Py_ssize_t K = val.shape[0], L = val.shape[1], k, l, first
    out_arr = np.zeros((K, L), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double last
    with nogil:
        for k in range(K):
            first = -1
            for l in range(L):
                if m[k, l]:
                    first = l
                    break
            if first < 0:
                continue
            last = val[k, first]
            for l in range(L):
                if m[k, l]:
                    last = val[k, l]
                out[k, l] = last
    return out_arr


def linear_rows(values, mask):
    cdef const double[:, ::1] val = np.ascontiguousarray(values, dtype=np.float64)
    cdef const signed char[:, ::1] m = np.ascontiguousarray(np.asarray(mask) != 0, dtype=np.int8)
    cdef Py_ssize_t K = val.shape[0], L = val.shape[1], k, l, j, prev
    out_arr = np.zeros((K, L), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double a, b, w
    with nogil:
        for k in range(K):
            prev = -1
            for l in range(L):
                if not m[k, l]:
                    continue
                out[k, l] = val[k, l]
                if prev < 0:
                    for j in range(l):
                        out[k, j] = val[k, l]
                else:
                    a = val[k, prev]
                    b = val[k, l]
                    for j in range(prev + 1, l):
                        w = <double>(j - prev) / <double>(l - prev)
                        out[k, j] = a + w * (b - a)
                prev = l
            if prev >= 0:
                for j in range(prev + 1, L):
                    out[k, j] = val[k, prev]
    return out_arr


def adam_step(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
              double lr, double beta1, double beta2, double eps, long step):
    """In-place bias-corrected Adam update on flat arrays."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double step_size = lr / (1.0 - beta1 ** step)
    cdef double inv_sqrt_c2 = 1.0 / sqrt(1.0 - beta2 ** step)
    cdef double gi, mi, vi
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_step arrays differ in length")
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] -= step_size * mi / (sqrt(vi) * inv_sqrt_c2 + eps)
