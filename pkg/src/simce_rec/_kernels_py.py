"""Numpy implementations of the compiled kernels, used when the extension is unavailable."""

import numpy as np
import scipy.sparse as sp

# bounds the (chunk, N, d) temporaries built by fancy indexing
_CHUNK_ELEMS = 1 << 22


def _chunks(n, per_row):
    step = max(1, _CHUNK_ELEMS // max(per_row, 1))
    for lo in range(0, n, step):
        yield lo, min(n, lo + step)


def gather_dot(a, rows_a, b, rows_b):
    if len(rows_a) != len(rows_b):
        raise ValueError("rows_a and rows_b must have the same length")
    return (a[rows_a] * b[rows_b]).sum(axis=1)


def gather_dot_multi(a, rows_a, b, rows_b):
    n, m = rows_b.shape
    if len(rows_a) != n:
        raise ValueError("rows_a and rows_b must have the same leading length")
    out = np.empty((n, m), dtype=np.float64)
    for lo, hi in _chunks(n, m * a.shape[1]):
        out[lo:hi] = (a[rows_a[lo:hi]][:, None, :] * b[rows_b[lo:hi]]).sum(axis=-1)
    return out


def scatter_outer(grad_a, grad_b, a, b, rows_a, rows_b, coef):
    """grad_a[ra] += c * b[rb] and grad_b[rb] += c * a[ra] for every (k, j)."""
    k_idx, j_idx = np.nonzero(coef)
    if len(k_idx) == 0:
        return
    c = coef[k_idx, j_idx][:, None]
    ra = rows_a[k_idx]
    rb = rows_b[k_idx, j_idx]
    for lo, hi in _chunks(len(ra), a.shape[1]):
        cc = c[lo:hi]
        np.add.at(grad_a, ra[lo:hi], cc * b[rb[lo:hi]])
        np.add.at(grad_b, rb[lo:hi], cc * a[ra[lo:hi]])


def csr_matmul(indptr, indices, data, x):
    nrows = len(indptr) - 1
    mat = sp.csr_matrix((data, indices, indptr), shape=(nrows, x.shape[0]))
    return np.ascontiguousarray(mat @ x)


def observed_mask(indptr, indices, users, items):
    """True where items[k] is in the sorted CSR row of users[k]."""
    if len(users) != len(items):
        raise ValueError("users and items must have the same length")
    if len(indices) == 0:
        return np.zeros(len(users), dtype=bool)
    lo = indptr[users]
    hi = indptr[users + 1]
    # global search is valid because every row of indices is sorted and rows are contiguous
    row_of = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    n_items = int(indices.max()) + 1
    keys = row_of * n_items + indices
    targets = users * n_items + np.minimum(items, n_items)
    pos = np.searchsorted(keys, targets)
    found = (pos < hi) & (pos >= lo)
    found &= indices[np.minimum(pos, len(indices) - 1)] == items
    return found
