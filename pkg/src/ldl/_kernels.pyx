# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled per-sample SGD sweeps for one- and two-layer linear nets.

Each sweep visits samples in ``order`` and applies the plain SGD update for
the loss ``||W x - t||^2`` immediately after each sample. Rows of the weight
matrix are processed one at a time so that the residual dot product and the
rank-1 update share a single pass over memory.

Layouts: ``X`` is (N, d) and ``T`` is (N, k), one sample per row.
"""
import numpy as np

cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t j = 0
    while j + 4 <= n:
        s0 += a[j] * b[j]
        s1 += a[j + 1] * b[j + 1]
        s2 += a[j + 2] * b[j + 2]
        s3 += a[j + 3] * b[j + 3]
        j += 4
    while j < n:
        s0 += a[j] * b[j]
        j += 1
    return (s0 + s1) + (s2 + s3)


cdef inline void _axpy(double alpha, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n):
        y[j] += alpha * x[j]


def sgd_single_sweep(double[:, ::1] W, const double[:, ::1] X, const double[:, ::1] T,
                     const Py_ssize_t[::1] order, double lr):
    """In-place SGD sweep of a single (k, d) layer."""
    cdef Py_ssize_t k = W.shape[0], d = W.shape[1]
    cdef Py_ssize_t n, i, s
    cdef double r
    cdef double step = 2.0 * lr
    if X.shape[1] != d or T.shape[1] != k or T.shape[0] != X.shape[0]:
        raise ValueError("shape mismatch between weights, inputs and targets")
    with nogil:
        for n in range(order.shape[0]):
            s = order[n]
            for i in range(k):
                r = _dot(&W[i, 0], &X[s, 0], d) - T[s, i]
                _axpy(-step * r, &X[s, 0], &W[i, 0], d)


def sgd_two_layer_sweep(double[:, ::1] W1, double[:, ::1] W2, const double[:, ::1] X,
                        const double[:, ::1] T, const Py_ssize_t[::1] order, double lr):
    """In-place SGD sweep of a net ``W2 @ W1`` with W1 (h, d) and W2 (k, h)."""
    cdef Py_ssize_t h = W1.shape[0], d = W1.shape[1], k = W2.shape[0]
    cdef Py_ssize_t n, i, a, s
    cdef double r
    cdef double step = 2.0 * lr
    if W2.shape[1] != h or X.shape[1] != d or T.shape[1] != k or T.shape[0] != X.shape[0]:
        raise ValueError("shape mismatch between weights, inputs and targets")
    cdef double[::1] hid = np.zeros(h)
    cdef double[::1] back = np.zeros(h)
    with nogil:
        for n in range(order.shape[0]):
            s = order[n]
            for a in range(h):
                hid[a] = _dot(&W1[a, 0], &X[s, 0], d)
                back[a] = 0.0
            for i in range(k):
                r = _dot(&W2[i, 0], &hid[0], h) - T[s, i]
                # gradient w.r.t. the hidden layer uses W2 before its update
                _axpy(r, &W2[i, 0], &back[0], h)
                _axpy(-step * r, &hid[0], &W2[i, 0], h)
            for a in range(h):
                _axpy(-step * back[a], &X[s, 0], &W1[a, 0], d)

