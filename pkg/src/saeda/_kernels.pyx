# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loss kernels; same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, log1p

cnp.import_array()


def centroid_sqdist(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], w = a.shape[1]
    cdef Py_ssize_t i, j
    cdef double value = 0.0
    diff_arr = np.zeros(w)
    cb_arr = np.zeros(w)
    cdef double[::1] diff = diff_arr
    cdef double[::1] cb = cb_arr
    for i in range(n):
        for j in range(w):
            diff[j] += a[i, j]
    for i in range(m):
        for j in range(w):
            cb[j] += b[i, j]
    for j in range(w):
        diff[j] = diff[j] / n - cb[j] / m
        value += diff[j] * diff[j]
    ga_arr = np.empty((n, w))
    gb_arr = np.empty((m, w))
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, ::1] gb = gb_arr
    for i in range(n):
        for j in range(w):
            ga[i, j] = 2.0 * diff[j] / n
    for i in range(m):
        for j in range(w):
            gb[i, j] = -2.0 * diff[j] / m
    return value, ga_arr, gb_arr


def classwise_centroid_sqdist(double[:, ::1] a, cnp.int64_t[::1] ya, double[:, ::1] b, cnp.int64_t[::1] yb,
                              int num_classes):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], w = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double value = 0.0, d
    na_arr = np.zeros(num_classes, dtype=np.int64)
    nb_arr = np.zeros(num_classes, dtype=np.int64)
    cdef cnp.int64_t[::1] na = na_arr
    cdef cnp.int64_t[::1] nb = nb_arr
    for i in range(n):
        na[ya[i]] += 1
    for i in range(m):
        nb[yb[i]] += 1
    for k in range(num_classes):
        if na[k] == 0 or nb[k] == 0:
            return 0.0, None, None, k
    diff_arr = np.zeros((num_classes, w))
    sb_arr = np.zeros((num_classes, w))
    cdef double[:, ::1] diff = diff_arr
    cdef double[:, ::1] sb = sb_arr
    for i in range(n):
        k = ya[i]
        for j in range(w):
            diff[k, j] += a[i, j]
    for i in range(m):
        k = yb[i]
        for j in range(w):
            sb[k, j] += b[i, j]
    for k in range(num_classes):
        for j in range(w):
            diff[k, j] = diff[k, j] / na[k] - sb[k, j] / nb[k]
    for k in range(num_classes):
        for j in range(w):
            value += diff[k, j] * diff[k, j]
    value /= num_classes
    ga_arr = np.zeros((n, w))
    gb_arr = np.zeros((m, w))
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, ::1] gb = gb_arr
    for i in range(n):
        k = ya[i]
        for j in range(w):
            ga[i, j] = 2.0 * diff[k, j] / (num_classes * na[k])
    for i in range(m):
        k = yb[i]
        for j in range(w):
            gb[i, j] = -2.0 * diff[k, j] / (num_classes * nb[k])
    return value, ga_arr, gb_arr, -1


def bce(double[:, ::1] x, double[:, ::1] p, double eps):
    cdef Py_ssize_t n = x.shape[0], w = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double total = 0.0, pc, xv, pv
    gp_arr = np.empty((n, w))
    cdef double[:, ::1] gp = gp_arr
    for i in range(n):
        for j in range(w):
            xv = x[i, j]
            pv = p[i, j]
            if pv < eps:
                pc = eps
            elif pv > 1.0 - eps:
                pc = 1.0 - eps
            else:
                pc = pv
            total -= xv * log(pc) + (1.0 - xv) * log1p(-pc)
            if pv < eps or pv > 1.0 - eps:
                gp[i, j] = 0.0
            else:
                gp[i, j] = (-(xv / pc) + (1.0 - xv) / (1.0 - pc)) / n
    return total / n, gp_arr
