"""Pure numpy versions of the hot kernels.

Signatures and results match ``_kernels.pyx`` exactly; the compiled module is
preferred when it imports.
"""
import numpy as np


def scatter_add_rows(target, idx, rows):
    """target[idx[n]] += rows[n] for every n with idx[n] != 0."""
    idx = np.asarray(idx, dtype=np.int64)
    keep = idx != 0
    if keep.all():
        np.add.at(target, idx, rows)
    else:
        np.add.at(target, idx[keep], rows[keep])


def seq_pool(table, ids):
    """Mean of table rows over the nonzero ids of each sequence.

    Returns ``(pooled, counts)``; an all-zero sequence pools to the zero vector.
    """
    ids = np.asarray(ids, dtype=np.int64)
    valid = ids != 0
    counts = valid.sum(axis=1).astype(np.float64)
    summed = np.zeros((ids.shape[0], table.shape[1]))
    for pos in range(ids.shape[1]):
        col = ids[:, pos]
        summed += table[col] * valid[:, pos, None]
    pooled = summed / np.maximum(counts, 1.0)[:, None]
    return pooled, counts


def seq_pool_backward(grad_table, ids, grad_pooled, counts):
    ids = np.asarray(ids, dtype=np.int64)
    scaled = grad_pooled / np.maximum(counts, 1.0)[:, None]
    for pos in range(ids.shape[1]):
        scatter_add_rows(grad_table, ids[:, pos], scaled)


def _midranks(scores):
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    n = len(scores)
    ranks = np.empty(n, dtype=np.float64)
    # boundaries of tie blocks
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], n]
    block_rank = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(block_rank, ends - starts)
    return ranks


def midrank_auc(scores, labels):
    """Mann-Whitney AUC; returns nan when only one class is present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = _midranks(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def grouped_auc(scores, labels, group_ids):
    """Size-weighted AUC sums over groups.

    Returns ``(weighted_sum, total_weight, n_groups, n_skipped)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    group_ids = np.asarray(group_ids, dtype=np.int64)
    order = np.argsort(group_ids, kind="mergesort")
    g = group_ids[order]
    starts = np.flatnonzero(np.r_[True, g[1:] != g[:-1]])
    ends = np.r_[starts[1:], len(g)]
    weighted = 0.0
    weight = 0.0
    skipped = 0
    for a, b in zip(starts, ends):
        sel = order[a:b]
        value = midrank_auc(scores[sel], labels[sel])
        if value != value:
            skipped += 1
            continue
        weighted += value * (b - a)
        weight += b - a
    return weighted, weight, len(starts), skipped
