# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_reference.py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def scan_forward(double[:, :, ::1] a, double[:, :, ::1] u):
    cdef Py_ssize_t nb = u.shape[0], nt = u.shape[1], nw = u.shape[2]
    cdef Py_ssize_t b, t, k
    out = np.empty((nb, nt, nw), dtype=np.float64)
    cdef double[:, :, ::1] h = out
    with nogil:
        for b in range(nb):
            for k in range(nw):
                h[b, 0, k] = u[b, 0, k]
            for t in range(1, nt):
                for k in range(nw):
                    h[b, t, k] = a[b, t, k] * h[b, t - 1, k] + u[b, t, k]
    return out


def scan_backward(double[:, :, ::1] a, double[:, :, ::1] h, double[:, :, ::1] grad_h):
    cdef Py_ssize_t nb = h.shape[0], nt = h.shape[1], nw = h.shape[2]
    cdef Py_ssize_t b, t, k
    ga_arr = np.zeros((nb, nt, nw), dtype=np.float64)
    gu_arr = np.empty((nb, nt, nw), dtype=np.float64)
    cdef double[:, :, ::1] ga = ga_arr
    cdef double[:, :, ::1] gu = gu_arr
    with nogil:
        for b in range(nb):
            for k in range(nw):
                gu[b, nt - 1, k] = grad_h[b, nt - 1, k]
            for t in range(nt - 2, -1, -1):
                for k in range(nw):
                    gu[b, t, k] = a[b, t + 1, k] * gu[b, t + 1, k] + grad_h[b, t, k]
            for t in range(1, nt):
                for k in range(nw):
                    ga[b, t, k] = gu[b, t, k] * h[b, t - 1, k]
    return ga_arr, gu_arr


def dtw_path_cost(cost_in):
    cdef double[:, ::1] cost = np.ascontiguousarray(cost_in, dtype=np.float64)
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1]
    cdef Py_ssize_t i, j
    cdef double best
    cdef long best_steps
    acc_arr = np.empty((n, m), dtype=np.float64)
    steps_arr = np.zeros((n, m), dtype=np.int64)
    cdef double[:, ::1] acc = acc_arr
    cdef long[:, ::1] steps = steps_arr
    with nogil:
        for i in range(n):
            for j in range(m):
                if i == 0 and j == 0:
                    acc[0, 0] = cost[0, 0]
                    steps[0, 0] = 1
                    continue
                best = INFINITY
                best_steps = 0
                if i > 0 and j > 0 and acc[i - 1, j - 1] < best:
                    best = acc[i - 1, j - 1]
                    best_steps = steps[i - 1, j - 1]
                if i > 0 and acc[i - 1, j] < best:
                    best = acc[i - 1, j]
                    best_steps = steps[i - 1, j]
                if j > 0 and acc[i, j - 1] < best:
                    best = acc[i, j - 1]
                    best_steps = steps[i, j - 1]
                acc[i, j] = best + cost[i, j]
                steps[i, j] = best_steps + 1
    return float(acc[n - 1, m - 1]), int(steps[n - 1, m - 1])


def ssm_forward(double[:, :, ::1] x, double[:, ::1] a, double[:, ::1] bb, double[:, ::1] c):
    cdef Py_ssize_t nb = x.shape[0], nt = x.shape[1], nw = x.shape[2], ns = a.shape[0]
    cdef Py_ssize_t b, t, k, d
    cdef double acc
    y_arr = np.zeros((nb, nt, nw), dtype=np.float64)
    h_arr = np.empty((nb, nt, ns, nw), dtype=np.float64)
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, :, :, ::1] h = h_arr
    with nogil:
        for b in range(nb):
            for k in range(ns):
                for d in range(nw):
                    h[b, 0, k, d] = bb[k, d] * x[b, 0, d]
            for t in range(1, nt):
                for k in range(ns):
                    for d in range(nw):
                        h[b, t, k, d] = a[k, d] * h[b, t - 1, k, d] + bb[k, d] * x[b, t, d]
            for t in range(nt):
                for k in range(ns):
                    for d in range(nw):
                        y[b, t, d] += c[k, d] * h[b, t, k, d]
    return y_arr, h_arr


def ssm_backward(double[:, :, ::1] x, double[:, ::1] a, double[:, ::1] bb, double[:, ::1] c,
                 double[:, :, :, ::1] h, double[:, :, ::1] gy):
    cdef Py_ssize_t nb = x.shape[0], nt = x.shape[1], nw = x.shape[2], ns = a.shape[0]
    cdef Py_ssize_t b, t, k, d
    cdef double g
    gx_arr = np.zeros((nb, nt, nw), dtype=np.float64)
    ga_arr = np.zeros((ns, nw), dtype=np.float64)
    gbb_arr = np.zeros((ns, nw), dtype=np.float64)
    gc_arr = np.zeros((ns, nw), dtype=np.float64)
    carry_arr = np.zeros((ns, nw), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, ::1] gbb = gbb_arr
    cdef double[:, ::1] gc = gc_arr
    cdef double[:, ::1] carry = carry_arr
    with nogil:
        for b in range(nb):
            for t in range(nt - 1, -1, -1):
                for k in range(ns):
                    for d in range(nw):
                        if t == nt - 1:
                            g = c[k, d] * gy[b, t, d]
                        else:
                            g = a[k, d] * carry[k, d] + c[k, d] * gy[b, t, d]
                        carry[k, d] = g
                        gc[k, d] += gy[b, t, d] * h[b, t, k, d]
                        if t > 0:
                            ga[k, d] += g * h[b, t - 1, k, d]
                        gbb[k, d] += g * x[b, t, d]
                        gx[b, t, d] += g * bb[k, d]
    return gx_arr, ga_arr, gbb_arr, gc_arr
