# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the per-entity inner loops of training and ranking."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs

cnp.import_array()


def bce_logits(const double[:, ::1] logits, const double[:, ::1] targets, double scale):
    """Fused binary cross-entropy on logits: per-row loss sums and gradient."""
    cdef Py_ssize_t n_rows = logits.shape[0]
    cdef Py_ssize_t n_cols = logits.shape[1]
    cdef Py_ssize_t b, i
    cdef double x, y, z, acc, sig
    row_losses_arr = np.empty(n_rows, dtype=np.float64)
    grad_arr = np.empty((n_rows, n_cols), dtype=np.float64)
    cdef double[::1] row_losses = row_losses_arr
    cdef double[:, ::1] grad = grad_arr
    with nogil:
        for b in range(n_rows):
            acc = 0.0
            for i in range(n_cols):
                x = logits[b, i]
                y = targets[b, i]
                z = exp(-fabs(x))
                if x >= 0:
                    acc += x - x * y + log1p(z)
                    sig = 1.0 / (1.0 + z)
                else:
                    acc += -x * y + log1p(z)
                    sig = z / (1.0 + z)
                grad[b, i] = scale * (sig - y)
            row_losses[b] = acc
    return row_losses_arr, grad_arr


def filtered_ranks(const double[:, ::1] scores, const cnp.int64_t[::1] true_idx,
                   const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices):
    """Pessimistic filtered ranks, one pass over each score row."""
    cdef Py_ssize_t n_rows = scores.shape[0]
    cdef Py_ssize_t n_cols = scores.shape[1]
    cdef Py_ssize_t b, i, p, t
    cdef double s
    cdef cnp.int64_t count
    ranks_arr = np.empty(n_rows, dtype=np.int64)
    cdef cnp.int64_t[::1] ranks = ranks_arr
    with nogil:
        for b in range(n_rows):
            t = true_idx[b]
            s = scores[b, t]
            count = 0
            for i in range(n_cols):
                if scores[b, i] >= s:
                    count += 1
            # the true entity always matched itself
            count -= 1
            for p in range(indptr[b], indptr[b + 1]):
                i = indices[p]
                if i != t and scores[b, i] >= s:
                    count -= 1
            ranks[b] = 1 + count
    return ranks_arr
