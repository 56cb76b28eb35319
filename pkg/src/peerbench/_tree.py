"""Compiled CART kernels for the regression forest.

Trees are stored as flat node arrays; leaves have ``left == -1``. All
randomness comes from a counter-based hash of (tree seed, stream, counter),
so each tree is reproducible on its own regardless of build order.
"""

import numpy as np
from numba import njit, prange

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_BOOT = np.uint64(1)
_STREAM_NODE = np.uint64(2)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _uniform(seed, stream, counter):
    h = _mix(seed + _GOLDEN * (stream + np.uint64(1)))
    h = _mix(h ^ (np.uint64(counter) * _GOLDEN + _GOLDEN))
    return np.float64(h >> np.uint64(11)) * _INV53


@njit(cache=True, nogil=True)
def _randbelow(seed, stream, counter, k):
    j = np.int64(_uniform(seed, stream, counter) * k)
    return k - 1 if j >= k else j


@njit(cache=True, nogil=True)
def grow_tree(X, y, rank, rows, m_try, min_node_size, seed,
              feature, threshold, left, right, value):
    """Grow one tree on ``X[rows]``; returns the node count.

    Every column keeps the node's positions sorted by that column, and a
    split stable-partitions each list, so nodes never re-sort. ``rank``
    holds per-column dense ranks of ``X`` used for the initial counting
    sort. Node arrays must have room for ``2 * len(rows) - 1`` nodes.
    """
    n_rows = rows.shape[0]
    p = X.shape[1]
    xt = np.empty((p, n_rows), np.float64)
    yr = np.empty(n_rows, np.float64)
    for r in range(n_rows):
        yr[r] = y[rows[r]]
        for j in range(p):
            xt[j, r] = X[rows[r], j]
    order = np.empty((p, n_rows), np.int64)
    cnt = np.empty(X.shape[0] + 1, np.int64)
    for j in range(p):
        cnt[:] = 0
        for r in range(n_rows):
            cnt[rank[rows[r], j] + 1] += 1
        for k in range(1, cnt.shape[0]):
            cnt[k] += cnt[k - 1]
        for r in range(n_rows):
            q = rank[rows[r], j]
            order[j, cnt[q]] = r
            cnt[q] += 1

    stack_node = np.empty(n_rows * 2, np.int64)
    stack_lo = np.empty(n_rows * 2, np.int64)
    stack_hi = np.empty(n_rows * 2, np.int64)
    cand = np.empty(p, np.int64)
    goes_left = np.zeros(n_rows, np.int64)
    buf = np.empty(n_rows, np.int64)
    buf_r = np.empty(n_rows, np.int64)

    n_nodes = 1
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n_rows
    top = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        m = hi - lo

        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        o0 = order[0]
        for k in range(lo, hi):
            v = yr[o0[k]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        # a pure node stores its value exactly rather than sum / m
        mean = ymin if ymin == ymax else total / m
        value[node] = mean
        feature[node] = -1
        threshold[node] = 0.0
        left[node] = -1
        right[node] = -1
        if m <= min_node_size or ymin == ymax:
            continue

        # columns that vary inside this node
        n_cand = 0
        for j in range(p):
            if xt[j, order[j, lo]] < xt[j, order[j, hi - 1]]:
                cand[n_cand] = j
                n_cand += 1
        if n_cand == 0:
            continue
        k_draw = m_try if m_try < n_cand else n_cand
        # partial Fisher-Yates over the candidate list
        for s in range(k_draw):
            r = s + _randbelow(seed, _STREAM_NODE, node * p + s, n_cand - s)
            t = cand[s]
            cand[s] = cand[r]
            cand[r] = t
        chosen = np.sort(cand[:k_draw])

        # gain = s_left^2 * m / (nl * nr); compared as cross-products
        best_num = -1.0
        best_den = 1.0
        best_col = -1
        best_thr = 0.0
        for c in range(k_draw):
            j = chosen[c]
            oj = order[j]
            xj = xt[j]
            s_left = 0.0
            for k in range(lo, hi - 1):
                s_left += yr[oj[k]] - mean
                a = xj[oj[k]]
                b = xj[oj[k + 1]]
                if a < b:
                    nl = k + 1 - lo
                    num = s_left * s_left
                    den = np.float64(nl * (m - nl))
                    if num * best_den > best_num * den:
                        best_num = num
                        best_den = den
                        best_col = j
                        thr = 0.5 * (a + b)
                        if thr >= b:
                            thr = a
                        best_thr = thr
        if best_col < 0:
            continue

        xb = xt[best_col]
        nl = 0
        for k in range(lo, hi):
            r = order[best_col, k]
            if xb[r] <= best_thr:
                goes_left[r] = 1
                nl += 1
            else:
                goes_left[r] = 0
        for j in range(p):
            oj = order[j]
            il = 0
            ir = 0
            for k in range(lo, hi):
                r = oj[k]
                g = goes_left[r]
                buf[il] = r
                buf_r[ir] = r
                il += g
                ir += 1 - g
            for k in range(nl):
                oj[lo + k] = buf[k]
            for k in range(m - nl):
                oj[lo + nl + k] = buf_r[k]

        feature[node] = best_col
        threshold[node] = best_thr
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        left[node] = lchild
        right[node] = rchild
        stack_node[top] = rchild
        stack_lo[top] = lo + nl
        stack_hi[top] = hi
        top += 1
        stack_node[top] = lchild
        stack_lo[top] = lo
        stack_hi[top] = lo + nl
        top += 1
    return n_nodes


@njit(cache=True, nogil=True, parallel=True)
def build_forest(X, y, rank, seeds, m_try, min_node_size,
                 feature, threshold, left, right, value, n_nodes, in_bag):
    n = X.shape[0]
    n_tree = seeds.shape[0]
    for t in prange(n_tree):
        rows = np.empty(n, np.int64)
        for k in range(n):
            r = _randbelow(seeds[t], _STREAM_BOOT, k, n)
            rows[k] = r
            in_bag[t, r] += 1
        n_nodes[t] = grow_tree(X, y, rank, rows, m_try, min_node_size, seeds[t],
                               feature[t], threshold[t], left[t], right[t], value[t])


def dense_ranks(X):
    """Per-column dense ranks (0-based, ties share a rank)."""
    R = np.empty(X.shape, np.int64)
    for j in range(X.shape[1]):
        _, R[:, j] = np.unique(X[:, j], return_inverse=True)
    return R


@njit(cache=True, nogil=True, parallel=True)
def predict_trees(X, feature, threshold, left, right, value):
    """Per-tree predictions, shape ``(n_tree, n_rows)``."""
    n_tree = feature.shape[0]
    m = X.shape[0]
    out = np.empty((n_tree, m), np.float64)
    for t in prange(n_tree):
        for i in range(m):
            node = 0
            while left[t, node] != -1:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[t, i] = value[t, node]
    return out
