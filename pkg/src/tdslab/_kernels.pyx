# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: embedding scatter-add, masked sequence pooling, ranking AUC."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(double[:, ::1] target, idx, double[:, :] rows):
    cdef const long long[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t n, d, r
    cdef Py_ssize_t dim = target.shape[1]
    for n in range(ix.shape[0]):
        r = ix[n]
        if r == 0:
            continue
        for d in range(dim):
            target[r, d] += rows[n, d]


def seq_pool(double[:, ::1] table, ids):
    cdef const long long[:, ::1] ix = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t n_rows = ix.shape[0], length = ix.shape[1], dim = table.shape[1]
    pooled_arr = np.zeros((n_rows, dim))
    counts_arr = np.zeros(n_rows)
    cdef double[:, ::1] pooled = pooled_arr
    cdef double[::1] counts = counts_arr
    cdef Py_ssize_t n, p, d
    cdef long long r
    cdef double c
    for n in range(n_rows):
        c = 0.0
        for p in range(length):
            r = ix[n, p]
            if r == 0:
                continue
            c += 1.0
            for d in range(dim):
                pooled[n, d] += table[r, d]
        counts[n] = c
        if c > 1.0:
            for d in range(dim):
                pooled[n, d] /= c
    return pooled_arr, counts_arr


def seq_pool_backward(double[:, ::1] grad_table, ids, double[:, :] grad_pooled, double[::1] counts):
    cdef const long long[:, ::1] ix = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t n, p, d
    cdef Py_ssize_t dim = grad_table.shape[1]
    cdef long long r
    cdef double c
    for n in range(ix.shape[0]):
        c = counts[n]
        if c < 1.0:
            c = 1.0
        for p in range(ix.shape[1]):
            r = ix[n, p]
            if r == 0:
                continue
            for d in range(dim):
                grad_table[r, d] += grad_pooled[n, d] / c


cdef double _auc_sorted(const double[::1] s, const unsigned char[::1] y, const long long[::1] order,
                        Py_ssize_t lo, Py_ssize_t hi):
    # order[lo:hi] sorts s ascending; midrank Mann-Whitney
    cdef Py_ssize_t i = lo, j, k
    cdef double rank_sum = 0.0, midrank
    cdef long long n_pos = 0, n_pos_block
    cdef Py_ssize_t n = hi - lo
    while i < hi:
        j = i
        n_pos_block = 0
        while j < hi and s[order[j]] == s[order[i]]:
            n_pos_block += y[order[j]]
            j += 1
        midrank = ((i - lo) + (j - lo) + 1) / 2.0
        rank_sum += midrank * n_pos_block
        n_pos += n_pos_block
        i = j
    if n_pos == 0 or n_pos == n:
        return np.nan
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (<double>n_pos * (n - n_pos))


def midrank_auc(scores, labels):
    cdef const double[::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const unsigned char[::1] y = (np.asarray(labels) > 0).astype(np.uint8)
    cdef const long long[::1] order = np.argsort(s, kind="mergesort").astype(np.int64)
    return _auc_sorted(s, y, order, 0, s.shape[0])


def grouped_auc(scores, labels, group_ids):
    s_np = np.ascontiguousarray(scores, dtype=np.float64)
    g_np = np.asarray(group_ids, dtype=np.int64)
    # sort by (group, score) so each group block is score-sorted
    order_np = np.lexsort((s_np, g_np)).astype(np.int64)
    cdef const double[::1] s = s_np
    cdef const unsigned char[::1] y = (np.asarray(labels) > 0).astype(np.uint8)
    cdef const long long[::1] g = np.ascontiguousarray(g_np)
    cdef const long long[::1] order = order_np
    cdef Py_ssize_t n = s.shape[0], a = 0, b
    cdef double weighted = 0.0, weight = 0.0, value
    cdef long long n_groups = 0, skipped = 0
    while a < n:
        b = a
        while b < n and g[order[b]] == g[order[a]]:
            b += 1
        n_groups += 1
        value = _auc_sorted(s, y, order, a, b)
        if value != value:
            skipped += 1
        else:
            weighted += value * (b - a)
            weight += b - a
        a = b
    return weighted, weight, n_groups, skipped
