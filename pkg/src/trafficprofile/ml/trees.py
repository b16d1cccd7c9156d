"""
Compiled CART-style classification tree builder (Gini criterion).

Two split strategies share one builder:

* exhaustive (random forest): every threshold between consecutive distinct
  values of each candidate feature is scored;
* randomized (extra trees): one uniform threshold between the node's min
  and max per candidate feature.

Candidate features are drawn without replacement until ``max_features``
non-constant ones have been examined. Randomness comes from a splitmix64
stream seeded per tree, so a tree is a pure function of its inputs.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Derive an independent 64-bit seed from a seed and substream indices."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


@njit(cache=True)
def _next(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _uniform(state):
    return np.float64(_next(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _randbelow(state, n):
    r = np.int64(_uniform(state) * n)
    return r if r < n else n - 1


@njit(cache=True)
def bootstrap_indices(n, seed):
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _randbelow(state, n)
    return out


@njit(cache=True, nogil=True)
def build_tree(X, y, n_classes, sample_idx, max_features, max_depth, min_samples_split,
               randomized, seed):
    """Grow one tree over rows ``sample_idx`` (duplicates allowed).

    Returns (feature, threshold, left, right, counts, n_samples, impurity);
    leaves have feature == -1. ``max_depth < 0`` means unlimited.
    """
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    m = sample_idx.shape[0]
    d = X.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, n_classes), dtype=np.float64)
    n_samples = np.zeros(cap, dtype=np.int64)
    impurity = np.zeros(cap, dtype=np.float64)

    idx = sample_idx.copy()
    feats = np.arange(d)
    xs = np.empty(m, dtype=np.float64)
    cl = np.zeros(n_classes, dtype=np.int64)
    cr = np.zeros(n_classes, dtype=np.int64)
    node_counts = np.zeros(n_classes, dtype=np.int64)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    top = 1
    node_count = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        n_node = end - start

        node_counts[:] = 0
        for i in range(start, end):
            node_counts[y[idx[i]]] += 1
        sq = 0
        biggest = 0
        for c in range(n_classes):
            counts[node, c] = node_counts[c]
            sq += node_counts[c] * node_counts[c]
            if node_counts[c] > biggest:
                biggest = node_counts[c]
        n_samples[node] = n_node
        impurity[node] = 1.0 - sq / (n_node * n_node)

        if n_node < min_samples_split or biggest == n_node or (max_depth >= 0 and depth >= max_depth):
            continue

        best_score = -1.0
        best_feat = -1
        best_thr = 0.0
        visited = 0
        i_feat = 0
        while i_feat < d and visited < max_features:
            j = i_feat + _randbelow(state, d - i_feat)
            tmp = feats[i_feat]
            feats[i_feat] = feats[j]
            feats[j] = tmp
            f = feats[i_feat]
            i_feat += 1

            lo = X[idx[start], f]
            hi = lo
            for i in range(start, end):
                v = X[idx[i], f]
                xs[i - start] = v
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            if hi <= lo:
                continue
            visited += 1

            if randomized:
                thr = lo + _uniform(state) * (hi - lo)
                if thr >= hi:
                    thr = lo
                cl[:] = 0
                cr[:] = 0
                nl = 0
                for i in range(start, end):
                    c = y[idx[i]]
                    if xs[i - start] <= thr:
                        cl[c] += 1
                        nl += 1
                    else:
                        cr[c] += 1
                nr = n_node - nl
                sl = 0
                sr = 0
                for c in range(n_classes):
                    sl += cl[c] * cl[c]
                    sr += cr[c] * cr[c]
                score = sl / nl + sr / nr
                if score > best_score:
                    best_score = score
                    best_feat = f
                    best_thr = thr
            else:
                order = np.argsort(xs[:n_node], kind="mergesort")
                cl[:] = 0
                for c in range(n_classes):
                    cr[c] = node_counts[c]
                sl = 0
                sr = sq
                for p in range(n_node - 1):
                    c = y[idx[start + order[p]]]
                    sl += 2 * cl[c] + 1
                    sr -= 2 * cr[c] - 1
                    cl[c] += 1
                    cr[c] -= 1
                    a = xs[order[p]]
                    b = xs[order[p + 1]]
                    if a < b:
                        nl = p + 1
                        score = sl / nl + sr / (n_node - nl)
                        if score > best_score:
                            best_score = score
                            best_feat = f
                            mid = a + (b - a) / 2.0
                            best_thr = mid if mid < b else a

        if best_feat < 0:
            continue

        # partition idx[start:end] so rows going left come first
        i = start
        jdx = end - 1
        while i <= jdx:
            if X[idx[i], best_feat] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[jdx]
                idx[jdx] = tmp
                jdx -= 1
        feature[node] = best_feat
        threshold[node] = best_thr
        lnode = node_count
        rnode = node_count + 1
        node_count += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered next
        stack_node[top] = rnode
        stack_start[top] = i
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lnode
        stack_start[top] = start
        stack_end[top] = i
        stack_depth[top] = depth + 1
        top += 1

    return (feature[:node_count], threshold[:node_count], left[:node_count],
            right[:node_count], counts[:node_count], n_samples[:node_count],
            impurity[:node_count])


@njit(cache=True, nogil=True)
def predict_tree(feature, threshold, left, right, proba, X):
    n = X.shape[0]
    out = np.empty((n, proba.shape[1]), dtype=np.float64)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r, :] = proba[node, :]
    return out
