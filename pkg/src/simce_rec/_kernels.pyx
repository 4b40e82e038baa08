# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for scoring, gradient scatter and sparse propagation.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature. Per-row reductions run in index order, so results are
deterministic for a fixed input but may differ from the numpy twin in the
last few ulps.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


def gather_dot(const f64[:, ::1] a, const i64[::1] rows_a,
               const f64[:, ::1] b, const i64[::1] rows_b):
    cdef Py_ssize_t n = rows_a.shape[0]
    cdef Py_ssize_t d = a.shape[1]
    cdef Py_ssize_t k, t
    cdef i64 ra, rb
    cdef f64 acc
    out = np.empty(n, dtype=np.float64)
    cdef f64[::1] o = out
    if rows_b.shape[0] != n:
        raise ValueError("rows_a and rows_b must have the same length")
    with nogil:
        for k in range(n):
            ra = rows_a[k]
            rb = rows_b[k]
            acc = 0.0
            for t in range(d):
                acc = acc + a[ra, t] * b[rb, t]
            o[k] = acc
    return out


def gather_dot_multi(const f64[:, ::1] a, const i64[::1] rows_a,
                     const f64[:, ::1] b, const i64[:, ::1] rows_b):
    cdef Py_ssize_t n = rows_a.shape[0]
    cdef Py_ssize_t m = rows_b.shape[1]
    cdef Py_ssize_t d = a.shape[1]
    cdef Py_ssize_t k, j, t
    cdef i64 ra, rb
    cdef f64 acc
    out = np.empty((n, m), dtype=np.float64)
    cdef f64[:, ::1] o = out
    if rows_b.shape[0] != n:
        raise ValueError("rows_a and rows_b must have the same leading length")
    with nogil:
        for k in range(n):
            ra = rows_a[k]
            for j in range(m):
                rb = rows_b[k, j]
                acc = 0.0
                for t in range(d):
                    acc = acc + a[ra, t] * b[rb, t]
                o[k, j] = acc
    return out


def scatter_outer(f64[:, ::1] grad_a, f64[:, ::1] grad_b,
                  const f64[:, ::1] a, const f64[:, ::1] b,
                  const i64[::1] rows_a, const i64[:, ::1] rows_b,
                  const f64[:, ::1] coef):
    """grad_a[ra] += c * b[rb] and grad_b[rb] += c * a[ra] for every (k, j)."""
    cdef Py_ssize_t n = rows_a.shape[0]
    cdef Py_ssize_t m = rows_b.shape[1]
    cdef Py_ssize_t d = a.shape[1]
    cdef Py_ssize_t k, j, t
    cdef i64 ra, rb
    cdef f64 c
    with nogil:
        for k in range(n):
            ra = rows_a[k]
            for j in range(m):
                c = coef[k, j]
                if c == 0.0:
                    continue
                rb = rows_b[k, j]
                for t in range(d):
                    grad_a[ra, t] += c * b[rb, t]
                    grad_b[rb, t] += c * a[ra, t]


def csr_matmul(const i64[::1] indptr, const i64[::1] indices,
               const f64[::1] data, const f64[:, ::1] x):
    cdef Py_ssize_t nrows = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t r, p, t
    cdef i64 c
    cdef f64 w
    out = np.zeros((nrows, d), dtype=np.float64)
    cdef f64[:, ::1] o = out
    with nogil:
        for r in range(nrows):
            for p in range(indptr[r], indptr[r + 1]):
                c = indices[p]
                w = data[p]
                for t in range(d):
                    o[r, t] += w * x[c, t]
    return out


def observed_mask(const i64[::1] indptr, const i64[::1] indices,
                  const i64[::1] users, const i64[::1] items):
    """True where items[k] is in the sorted CSR row of users[k]."""
    cdef Py_ssize_t n = users.shape[0]
    cdef Py_ssize_t k
    cdef i64 lo, hi, mid, target
    out = np.zeros(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] o = out
    if items.shape[0] != n:
        raise ValueError("users and items must have the same length")
    with nogil:
        for k in range(n):
            lo = indptr[users[k]]
            hi = indptr[users[k] + 1]
            target = items[k]
            while lo < hi:
                mid = (lo + hi) >> 1
                if indices[mid] < target:
                    lo = mid + 1
                else:
                    hi = mid
            o[k] = lo < indptr[users[k] + 1] and indices[lo] == target
    return out
