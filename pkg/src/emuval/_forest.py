"""Compiled kernels for regression-tree ensembles.

Training points are described once per dataset by per-feature dense ranks,
so refitting on relabelled copies of the same points (permutation nulls)
reuses that work.  Trees are grown on bootstrap multiplicities rather than
on explicit resampled rows.

Trees are stored flat: every node has a split feature (-1 for leaves), a
threshold, child offsets and the mean label of the node.  Each tree owns a
contiguous block of node slots inside the ensemble arrays.
"""

import numba as nb
import numpy as np

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


@nb.njit(cache=True, nogil=True)
def _next(state):
    # splitmix64 step; state is a length-1 uint64 array
    state[0] += _M1
    z = state[0]
    z = (z ^ (z >> _S30)) * _M2
    z = (z ^ (z >> _S27)) * _M3
    return z ^ (z >> _S31)


def rank_features(x):
    """Dense ranks (D, n), padded sorted unique values (D, n) and counts (D,)."""
    n, d = x.shape
    ranks = np.empty((d, n), dtype=np.int64)
    uvals = np.zeros((d, n), dtype=np.float64)
    n_unique = np.empty(d, dtype=np.int64)
    for f in range(d):
        u, inv = np.unique(x[:, f], return_inverse=True)
        ranks[f] = inv.ravel()
        uvals[f, : u.size] = u
        n_unique[f] = u.size
    return ranks, uvals, n_unique


@nb.njit(cache=True, nogil=True)
def _insertion_sort(a, m):
    for i in range(1, m):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


@nb.njit(cache=True, nogil=True)
def _build_tree(ranks, uvals, n_unique, y, idx, w, mtry, min_leaf, seed,
                feat, thr, left, right, value, base, cw, cy, keys, buf_i, buf_w):
    """Grow one tree on unique rows ``idx`` with multiplicities ``w``."""
    n = idx.shape[0]
    n_features = ranks.shape[0]
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    features = np.arange(n_features)

    stack_node = np.empty(n + 1, dtype=np.int64)
    stack_lo = np.empty(n + 1, dtype=np.int64)
    stack_hi = np.empty(n + 1, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        m = hi - lo
        wsum = 0.0
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(lo, hi):
            v = y[idx[i]]
            total += w[i] * v
            wsum += w[i]
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        g = base + node
        value[g] = total / wsum
        feat[g] = -1
        thr[g] = 0.0
        left[g] = -1
        right[g] = -1
        if wsum < 2 * min_leaf or ymin == ymax:
            continue

        best_score = total * total / wsum + 1e-12
        best_f = -1
        best_r = -1
        best_t = 0.0
        for j in range(mtry):
            r = j + np.int64(_next(state) % np.uint64(n_features - j))
            tmp = features[j]
            features[j] = features[r]
            features[r] = tmp
            f = features[j]
            n_u = n_unique[f]
            if n_u < 2:
                continue
            if n_u <= 4 * m:
                # counting pass over the rank space of this feature
                for q in range(n_u):
                    cw[q] = 0.0
                    cy[q] = 0.0
                for i in range(lo, hi):
                    q = ranks[f, idx[i]]
                    cw[q] += w[i]
                    cy[q] += w[i] * y[idx[i]]
                n_left = 0.0
                s_left = 0.0
                prev = -1
                for q in range(n_u):
                    if cw[q] == 0.0:
                        continue
                    if prev >= 0 and n_left >= min_leaf:
                        n_right = wsum - n_left
                        if n_right < min_leaf:
                            break
                        s_right = total - s_left
                        score = s_left * s_left / n_left + s_right * s_right / n_right
                        if score > best_score:
                            best_score = score
                            best_f = f
                            best_r = prev
                            a = uvals[f, prev]
                            b = uvals[f, q]
                            t = 0.5 * (a + b)
                            if t >= b:
                                t = a
                            best_t = t
                    n_left += cw[q]
                    s_left += cy[q]
                    prev = q
            else:
                for i in range(m):
                    keys[i] = ranks[f, idx[lo + i]] * n + i
                if m <= 48:
                    _insertion_sort(keys, m)
                    ks = keys
                else:
                    ks = np.sort(keys[:m])
                n_left = 0.0
                s_left = 0.0
                prev = -1
                for i in range(m):
                    q = ks[i] // n
                    loc = lo + ks[i] % n
                    if prev >= 0 and q != prev and n_left >= min_leaf:
                        n_right = wsum - n_left
                        if n_right < min_leaf:
                            break
                        s_right = total - s_left
                        score = s_left * s_left / n_left + s_right * s_right / n_right
                        if score > best_score:
                            best_score = score
                            best_f = f
                            best_r = prev
                            a = uvals[f, prev]
                            b = uvals[f, q]
                            t = 0.5 * (a + b)
                            if t >= b:
                                t = a
                            best_t = t
                    n_left += w[loc]
                    s_left += w[loc] * y[idx[loc]]
                    prev = q

        if best_f < 0:
            continue

        n_left_rows = 0
        for i in range(lo, hi):
            if ranks[best_f, idx[i]] <= best_r:
                n_left_rows += 1
        li = 0
        ri = n_left_rows
        for i in range(lo, hi):
            if ranks[best_f, idx[i]] <= best_r:
                buf_i[li] = idx[i]
                buf_w[li] = w[i]
                li += 1
            else:
                buf_i[ri] = idx[i]
                buf_w[ri] = w[i]
                ri += 1
        for i in range(m):
            idx[lo + i] = buf_i[i]
            w[lo + i] = buf_w[i]

        feat[g] = best_f
        thr[g] = best_t
        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        left[g] = left_id
        right[g] = right_id
        stack_node[top] = right_id
        stack_lo[top] = lo + n_left_rows
        stack_hi[top] = hi
        top += 1
        stack_node[top] = left_id
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left_rows
        top += 1

    return n_nodes


@nb.njit(cache=True, nogil=True)
def fit_forest(ranks, uvals, n_unique, y, counts, seeds, mtry, min_leaf):
    """Grow one tree per row of ``counts`` (bootstrap multiplicity of each point)."""
    n_trees = counts.shape[0]
    n = counts.shape[1]
    slots = 2 * n + 1
    size = n_trees * slots
    feat = np.empty(size, dtype=np.int64)
    thr = np.empty(size, dtype=np.float64)
    left = np.empty(size, dtype=np.int64)
    right = np.empty(size, dtype=np.int64)
    value = np.empty(size, dtype=np.float64)
    offsets = np.empty(n_trees, dtype=np.int64)
    idx = np.empty(n, dtype=np.int64)
    w = np.empty(n, dtype=np.float64)
    cw = np.empty(n, dtype=np.float64)
    cy = np.empty(n, dtype=np.float64)
    keys = np.empty(n, dtype=np.int64)
    buf_i = np.empty(n, dtype=np.int64)
    buf_w = np.empty(n, dtype=np.float64)
    pos = 0
    for t in range(n_trees):
        k = 0
        for i in range(n):
            if counts[t, i] > 0:
                idx[k] = i
                w[k] = counts[t, i]
                k += 1
        offsets[t] = pos
        used = _build_tree(ranks, uvals, n_unique, y, idx[:k], w[:k], mtry, min_leaf, seeds[t],
                           feat, thr, left, right, value, pos, cw, cy, keys, buf_i, buf_w)
        pos += used
    return feat[:pos].copy(), thr[:pos].copy(), left[:pos].copy(), right[:pos].copy(), value[:pos].copy(), offsets


@nb.njit(cache=True, nogil=True)
def predict_forest(Xq, feat, thr, left, right, value, offsets):
    """Per-point average of tree predictions."""
    q = Xq.shape[0]
    n_trees = offsets.shape[0]
    out = np.zeros(q, dtype=np.float64)
    for i in range(q):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feat[base + node] >= 0:
                if Xq[i, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[i] = acc / n_trees
    return out


@nb.njit(cache=True, nogil=True)
def predict_trees(Xq, feat, thr, left, right, value, offsets):
    """(n_trees, q) matrix of individual tree predictions."""
    q = Xq.shape[0]
    n_trees = offsets.shape[0]
    out = np.empty((n_trees, q), dtype=np.float64)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(q):
            node = 0
            while feat[base + node] >= 0:
                if Xq[i, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[t, i] = value[base + node]
    return out
