# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sliding-window deviation sweep."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log2, NAN

cnp.import_array()


def deviation_series(double[:, ::1] m, int omega, double delta_cap, double eps, bint weighting):
    cdef Py_ssize_t S = m.shape[0], N = m.shape[1]
    cdef Py_ssize_t h = omega - 1
    cdef Py_ssize_t s, d, i
    cdef double mean, var, std, x, dev, w
    sigma_arr = np.full((S, N), np.nan)
    weight_arr = np.full((S, N), np.nan)
    cdef double[:, ::1] sigma = sigma_arr
    cdef double[:, ::1] weight = weight_arr
    with nogil:
        for s in range(S):
            for d in range(h, N):
                mean = 0.0
                for i in range(d - h, d):
                    mean += m[s, i]
                mean /= h
                var = 0.0
                for i in range(d - h, d):
                    x = m[s, i] - mean
                    var += x * x
                std = sqrt(var / h)
                if std < eps:
                    std = eps
                dev = (m[s, d] - mean) / std
                if dev > delta_cap:
                    dev = delta_cap
                elif dev < -delta_cap:
                    dev = -delta_cap
                sigma[s, d] = dev
                if weighting:
                    w = std if std > 2.0 else 2.0
                    weight[s, d] = 1.0 / log2(w)
                else:
                    weight[s, d] = 1.0
    return sigma_arr, weight_arr
