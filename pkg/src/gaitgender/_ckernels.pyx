# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``; same signatures."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, INFINITY

cnp.import_array()

cdef enum:
    L_SHOULDER = 5
    R_SHOULDER = 6
    L_HIP = 11
    R_HIP = 12


def frame_anchors(data):
    cdef const double[:, :, ::1] d = np.ascontiguousarray(data, dtype=np.float64)
    cdef Py_ssize_t T = d.shape[0], t
    out_arr = np.empty((T, 4), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double px, py, nx, ny, dx, dy
    for t in range(T):
        px = 0.5 * (d[t, L_HIP, 0] + d[t, R_HIP, 0])
        py = 0.5 * (d[t, L_HIP, 1] + d[t, R_HIP, 1])
        nx = 0.5 * (d[t, L_SHOULDER, 0] + d[t, R_SHOULDER, 0])
        ny = 0.5 * (d[t, L_SHOULDER, 1] + d[t, R_SHOULDER, 1])
        dx = d[t, L_SHOULDER, 0] - d[t, R_SHOULDER, 0]
        dy = d[t, L_SHOULDER, 1] - d[t, R_SHOULDER, 1]
        out[t, 0] = px
        out[t, 1] = py
        out[t, 2] = sqrt(dx * dx + dy * dy)
        dx = nx - px
        dy = ny - py
        out[t, 3] = sqrt(dx * dx + dy * dy)
    return out_arr


def apply_anchors(data, anchors, double eps):
    cdef const double[:, :, ::1] d = np.ascontiguousarray(data, dtype=np.float64)
    cdef const double[:, ::1] a = np.ascontiguousarray(anchors, dtype=np.float64)
    cdef Py_ssize_t T = d.shape[0], J = d.shape[1], C = d.shape[2], t, j, c
    out_arr = np.zeros((T, J, C), dtype=np.float64)
    deg_arr = np.zeros(T, dtype=np.uint8)
    cdef double[:, :, ::1] out = out_arr
    cdef unsigned char[::1] deg = deg_arr
    for t in range(T):
        if a[t, 2] < eps or a[t, 3] < eps:
            deg[t] = 1
        for j in range(J):
            if not deg[t]:
                out[t, j, 0] = (d[t, j, 0] - a[t, 0]) / a[t, 2]
                out[t, j, 1] = (d[t, j, 1] - a[t, 1]) / a[t, 3]
            for c in range(2, C):
                out[t, j, c] = d[t, j, c]
    return out_arr, deg_arr


def fill_gaps(data, valid):
    out_arr = np.array(data, dtype=np.float64, order="C", copy=True)
    cdef double[:, :, ::1] d = out_arr
    cdef const unsigned char[::1] v = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t T = d.shape[0], J = d.shape[1], t, j, c, prev = -1, nxt
    cdef Py_ssize_t nvalid = 0
    cdef double w
    for t in range(T):
        nvalid += v[t]
    if nvalid == 0 or nvalid == T:
        return out_arr
    for t in range(T):
        if v[t]:
            prev = t
            continue
        nxt = t + 1
        while nxt < T and not v[nxt]:
            nxt += 1
        for j in range(J):
            for c in range(2):
                if prev < 0:
                    d[t, j, c] = d[nxt, j, c]
                elif nxt >= T:
                    d[t, j, c] = d[prev, j, c]
                else:
                    w = <double>(t - prev) / <double>(nxt - prev)
                    d[t, j, c] = (1.0 - w) * d[prev, j, c] + w * d[nxt, j, c]
    return out_arr


def resample_linear(data, Py_ssize_t target_len):
    cdef const double[:, :, ::1] d = np.ascontiguousarray(data, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0], J = d.shape[1], C = d.shape[2], i, j, c, lo
    if n == 1:
        return np.repeat(np.asarray(d), target_len, axis=0)
    out_arr = np.empty((target_len, J, C), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double pos, frac
    for i in range(target_len):
        pos = <double>i * <double>(n - 1) / <double>(target_len - 1)
        lo = <Py_ssize_t>floor(pos)
        if lo > n - 2:
            lo = n - 2
        frac = pos - lo
        for j in range(J):
            for c in range(C):
                out[i, j, c] = d[lo, j, c] * (1.0 - frac) + d[lo + 1, j, c] * frac
    return out_arr


def knn_cosine(vectors, Py_ssize_t k):
    cdef const double[:, ::1] v = np.ascontiguousarray(vectors, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], dim = v.shape[1], i, j, m, q
    idx_arr = np.empty((n, k), dtype=np.intp)
    dist_arr = np.empty((n, k), dtype=np.float64)
    cdef Py_ssize_t[:, ::1] idx = idx_arr
    cdef double[:, ::1] dist = dist_arr
    cdef double s
    for i in range(n):
        for m in range(k):
            dist[i, m] = INFINITY
            idx[i, m] = n
        for j in range(n):
            if j == i:
                continue
            s = 0.0
            for q in range(dim):
                s += v[i, q] * v[j, q]
            s = 1.0 - s
            # insertion into the sorted top-k; strict < keeps the lower index on ties
            if s < dist[i, k - 1]:
                m = k - 1
                while m > 0 and s < dist[i, m - 1]:
                    dist[i, m] = dist[i, m - 1]
                    idx[i, m] = idx[i, m - 1]
                    m -= 1
                dist[i, m] = s
                idx[i, m] = j
    return idx_arr, dist_arr
