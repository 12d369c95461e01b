# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled neighbor-attention kernels (hot loop of every training epoch).

Plain serial loops over CSR edges: accumulation order is fixed, so results
are reproducible bit-for-bit for a given graph.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def attention_forward(double[:, ::1] q, double[:, ::1] k, double[:, ::1] v,
                      cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
                      int heads):
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t dim = q.shape[1]
    cdef Py_ssize_t head_dim = dim // heads
    cdef Py_ssize_t nnz = indices.shape[0]
    cdef double scale = 1.0 / sqrt(<double>head_dim)

    out_arr = np.zeros((n, dim), dtype=np.float64)
    beta_arr = np.zeros((nnz, heads), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] beta = beta_arr

    cdef Py_ssize_t h, i, e, c, j, base
    cdef double dot, rowmax, denom, w
    with nogil:
        for h in range(heads):
            base = h * head_dim
            for i in range(n):
                if indptr[i] == indptr[i + 1]:
                    continue
                rowmax = -1e308
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    dot = 0.0
                    for c in range(head_dim):
                        dot += q[i, base + c] * k[j, base + c]
                    dot *= scale
                    beta[e, h] = dot
                    if dot > rowmax:
                        rowmax = dot
                denom = 0.0
                for e in range(indptr[i], indptr[i + 1]):
                    w = exp(beta[e, h] - rowmax)
                    beta[e, h] = w
                    denom += w
                for e in range(indptr[i], indptr[i + 1]):
                    beta[e, h] /= denom
                    j = indices[e]
                    for c in range(head_dim):
                        out[i, base + c] += beta[e, h] * v[j, base + c]
    return out_arr, beta_arr


def attention_backward(double[:, ::1] q, double[:, ::1] k, double[:, ::1] v,
                       cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
                       int heads, double[:, ::1] beta,
                       double[:, ::1] grad_out):
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t dim = q.shape[1]
    cdef Py_ssize_t head_dim = dim // heads
    cdef Py_ssize_t nnz = indices.shape[0]
    cdef double scale = 1.0 / sqrt(<double>head_dim)

    dq_arr = np.zeros((n, dim), dtype=np.float64)
    dk_arr = np.zeros((n, dim), dtype=np.float64)
    dv_arr = np.zeros((n, dim), dtype=np.float64)
    dbeta_arr = np.zeros(nnz, dtype=np.float64)
    cdef double[:, ::1] dq = dq_arr
    cdef double[:, ::1] dk = dk_arr
    cdef double[:, ::1] dv = dv_arr
    cdef double[::1] dbeta = dbeta_arr

    cdef Py_ssize_t h, i, e, c, j, base
    cdef double dot, rowdot, dlogit
    with nogil:
        for h in range(heads):
            base = h * head_dim
            for i in range(n):
                rowdot = 0.0
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    dot = 0.0
                    for c in range(head_dim):
                        dv[j, base + c] += beta[e, h] * grad_out[i, base + c]
                        dot += grad_out[i, base + c] * v[j, base + c]
                    dbeta[e] = dot
                    rowdot += beta[e, h] * dot
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    dlogit = beta[e, h] * (dbeta[e] - rowdot) * scale
                    for c in range(head_dim):
                        dq[i, base + c] += dlogit * k[j, base + c]
                        dk[j, base + c] += dlogit * q[i, base + c]
    return dq_arr, dk_arr, dv_arr
