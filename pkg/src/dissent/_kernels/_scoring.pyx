# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring kernels.

All kernels take a dense C-contiguous probability block of shape
(pairs, models, relations) with absent scores already filled as 0.0, and
reduce it per pair.  Reduction order is fixed (models in index order inside
each relation, relations in index order) so results do not depend on how the
pair stream was sharded.
"""

import numpy as np

from libc.math cimport exp, log


cdef inline double _phi(const double[:, :, ::1] probs, Py_ssize_t p, Py_ssize_t r,
                        Py_ssize_t n_models) nogil:
    # 1 - [prod_i p_i + prod_i (1 - p_i)], clamped against rounding below 0.
    cdef double prod_yes = 1.0
    cdef double prod_no = 1.0
    cdef Py_ssize_t m
    for m in range(n_models):
        prod_yes *= probs[p, m, r]
        prod_no *= 1.0 - probs[p, m, r]
    cdef double phi = 1.0 - (prod_yes + prod_no)
    if phi < 0.0:
        phi = 0.0
    return phi


def relation_disagreements(const double[:, :, ::1] probs):
    """Per-relation disagreement, shape (pairs, relations)."""
    cdef Py_ssize_t P = probs.shape[0], M = probs.shape[1], R = probs.shape[2]
    out_arr = np.empty((P, R), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, r
    with nogil:
        for p in range(P):
            for r in range(R):
                out[p, r] = _phi(probs, p, r, M)
    return out_arr


def committee_log_scores(const double[:, :, ::1] probs, double delta):
    """Log-sum disagreement per pair: sum_r log(phi_r + delta)."""
    cdef Py_ssize_t P = probs.shape[0], M = probs.shape[1], R = probs.shape[2]
    out_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, r
    cdef double acc
    with nogil:
        for p in range(P):
            acc = 0.0
            for r in range(R):
                acc += log(_phi(probs, p, r, M) + delta)
            out[p] = acc
    return out_arr


def pair_products(const double[:, :, ::1] probs):
    """Product over relations of phi_r, accumulated in log space.

    Any zero phi yields an exact 0.0 product; deep underflow clamps to 0.0.
    """
    cdef Py_ssize_t P = probs.shape[0], M = probs.shape[1], R = probs.shape[2]
    out_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, r
    cdef double acc, phi
    cdef bint zero
    with nogil:
        for p in range(P):
            acc = 0.0
            zero = False
            for r in range(R):
                phi = _phi(probs, p, r, M)
                if phi == 0.0:
                    zero = True
                    break
                acc += log(phi)
            out[p] = 0.0 if zero else exp(acc)
    return out_arr


def ppm_scores(const double[:, :, ::1] probs):
    """Mean over relations of (1 - prod_i p_i)."""
    cdef Py_ssize_t P = probs.shape[0], M = probs.shape[1], R = probs.shape[2]
    out_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, m, r
    cdef double acc, prod_yes
    with nogil:
        for p in range(P):
            acc = 0.0
            for r in range(R):
                prod_yes = 1.0
                for m in range(M):
                    prod_yes *= probs[p, m, r]
                acc += 1.0 - prod_yes
            out[p] = acc / R
    return out_arr


def ppd_scores(const double[:, :, ::1] probs, double delta):
    """Sum over relations of log((1 - prod_i p_i) + delta)."""
    cdef Py_ssize_t P = probs.shape[0], M = probs.shape[1], R = probs.shape[2]
    out_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, m, r
    cdef double acc, prod_yes
    with nogil:
        for p in range(P):
            acc = 0.0
            for r in range(R):
                prod_yes = 1.0
                for m in range(M):
                    prod_yes *= probs[p, m, r]
                acc += log((1.0 - prod_yes) + delta)
            out[p] = acc
    return out_arr


def entropy_scores(const double[:, :, ::1] probs):
    """Sum over relations of the binary entropy (nats) of the model-mean score."""
    cdef Py_ssize_t P = probs.shape[0], M = probs.shape[1], R = probs.shape[2]
    out_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, m, r
    cdef double acc, mean, h
    with nogil:
        for p in range(P):
            acc = 0.0
            for r in range(R):
                mean = 0.0
                for m in range(M):
                    mean += probs[p, m, r]
                mean /= M
                h = 0.0
                if 0.0 < mean < 1.0:
                    h = -mean * log(mean) - (1.0 - mean) * log(1.0 - mean)
                acc += h
            out[p] = acc
    return out_arr
