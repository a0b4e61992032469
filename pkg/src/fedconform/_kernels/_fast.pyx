# cython: language_level=3
# cython: boundscheck=False
# cython: wraparound=False
# cython: cdivision=True
"""Compiled numerical hot paths: batched MLP forward/backward and bank scans.

Mirrors the API of ``_numpy_impl``; agreement between the two backends is
enforced by the kernel cross-check tests.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, sqrt

cnp.import_array()

BACKEND = "compiled"


def mlp_forward(const double[:, ::1] w1, const double[::1] b1,
                const double[:, ::1] w2, const double[::1] b2,
                const double[:, ::1] x):
    """relu(x @ w1.T + b1) hidden layer, then row-softmax output logits."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t h = w1.shape[0]
    cdef Py_ssize_t c = w2.shape[0]
    hidden_arr = np.empty((n, h))
    probs_arr = np.empty((n, c))
    scratch_arr = np.empty(c)
    cdef double[:, ::1] hidden = hidden_arr
    cdef double[:, ::1] probs = probs_arr
    cdef double[::1] scratch = scratch_arr
    cdef Py_ssize_t i, j, k
    cdef double acc, top, norm
    with nogil:
        for i in range(n):
            for j in range(h):
                acc = b1[j]
                for k in range(d):
                    acc += w1[j, k] * x[i, k]
                hidden[i, j] = acc if acc > 0.0 else 0.0
            top = -INFINITY
            for j in range(c):
                acc = b2[j]
                for k in range(h):
                    acc += w2[j, k] * hidden[i, k]
                scratch[j] = acc
                if acc > top:
                    top = acc
            norm = 0.0
            for j in range(c):
                scratch[j] = exp(scratch[j] - top)
                norm += scratch[j]
            for j in range(c):
                probs[i, j] = scratch[j] / norm
    return hidden_arr, probs_arr


def mlp_backward(const double[:, ::1] w1, const double[::1] b1,
                 const double[:, ::1] w2, const double[::1] b2,
                 const double[:, ::1] x, const cnp.int64_t[::1] y,
                 const double[:, ::1] hidden, const double[:, ::1] probs):
    """Gradients of the batch-mean cross-entropy for all four layers."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t h = w1.shape[0]
    cdef Py_ssize_t c = w2.shape[0]
    gw1_arr = np.zeros((h, d))
    gb1_arr = np.zeros(h)
    gw2_arr = np.zeros((c, h))
    gb2_arr = np.zeros(c)
    dlog_arr = np.empty(c)
    cdef double[:, ::1] gw1 = gw1_arr
    cdef double[::1] gb1 = gb1_arr
    cdef double[:, ::1] gw2 = gw2_arr
    cdef double[::1] gb2 = gb2_arr
    cdef double[::1] dlog = dlog_arr
    cdef Py_ssize_t i, j, k
    cdef double dl, dh, nn = <double> n
    with nogil:
        for i in range(n):
            for j in range(c):
                dl = probs[i, j]
                if j == y[i]:
                    dl -= 1.0
                dl /= nn
                dlog[j] = dl
                gb2[j] += dl
                for k in range(h):
                    gw2[j, k] += dl * hidden[i, k]
            for j in range(h):
                if hidden[i, j] > 0.0:
                    dh = 0.0
                    for k in range(c):
                        dh += dlog[k] * w2[k, j]
                    gb1[j] += dh
                    for k in range(d):
                        gw1[j, k] += dh * x[i, k]
    return gw1_arr, gb1_arr, gw2_arr, gb2_arr


def min_distances(const double[:, ::1] bank, const double[:, ::1] queries):
    """Euclidean distance from each query row to its nearest bank row."""
    cdef Py_ssize_t m = bank.shape[0]
    cdef Py_ssize_t h = bank.shape[1]
    cdef Py_ssize_t n = queries.shape[0]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double best, acc, diff
    with nogil:
        for i in range(n):
            best = INFINITY
            for j in range(m):
                acc = 0.0
                for k in range(h):
                    diff = queries[i, k] - bank[j, k]
                    acc += diff * diff
                if acc < best:
                    best = acc
            out[i] = sqrt(best)
    return out_arr
