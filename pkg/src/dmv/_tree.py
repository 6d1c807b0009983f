"""Compiled kernels for regression-tree growth and forest prediction.

The growth kernel is deliberately self-contained: it draws its own
bootstrap sample and feature subsets from an inlined splitmix64 stream so
that the entire per-tree random consumption order is pinned (bootstrap
draws first, then per-node subset draws in depth-first preorder). Nodes
are emitted in preorder; the left child of node ``i`` is always ``i + 1``.

Per-feature sort orders (and the feature values in that order) are computed
once per tree and kept partitioned in sync with the tree, so no node ever
re-sorts and split scans stream over contiguous memory.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64
_GAMMA = U64(0x9E3779B97F4A7C15)
_MUL1 = U64(0xBF58476D1CE4E5B9)
_MUL2 = U64(0x94D049BB133111EB)


@njit(inline="always")
def _sm_next(state):
    state = state + _GAMMA
    z = (state ^ (state >> U64(30))) * _MUL1
    z = (z ^ (z >> U64(27))) * _MUL2
    return state, z ^ (z >> U64(31))


@njit(cache=True, nogil=True)
def grow_tree(X, y, bootstrap, max_depth, min_split, min_leaf, m_features, seed,
              node_feat, node_thr, node_left, node_right, node_value, node_n,
              node_gain):
    """Grow one CART regression tree; returns the number of nodes written.

    Split quality is weighted variance reduction, maximized via the proxy
    S_L^2/n_L + S_R^2/n_R (the parent term is constant per node). Candidate
    thresholds lie at midpoints of consecutive distinct sorted values; ties
    in the score resolve to the lowest feature index, then lowest threshold.
    """
    n, d = X.shape
    state = seed

    yv = np.empty(n, np.float64)
    rows = np.empty(n, np.int64)
    if bootstrap:
        for j in range(n):
            state, z = _sm_next(state)
            rows[j] = np.int64(z % U64(n))
    else:
        for j in range(n):
            rows[j] = j
    for j in range(n):
        yv[j] = y[rows[j]]

    # per-feature: sample positions sorted by value, plus the values in that
    # order (contiguous boundary scans; targets stay in yv, L1-resident)
    order = np.empty((d, n), np.int32)
    xs = np.empty((d, n), np.float64)
    col = np.empty(n, np.float64)
    for f in range(d):
        for j in range(n):
            col[j] = X[rows[j], f]
        o = np.argsort(col)
        for j in range(n):
            p = o[j]
            order[f, j] = np.int32(p)
            xs[f, j] = col[p]

    tmp_o = np.empty(n, np.int32)
    tmp_x = np.empty(n, np.float64)
    go_left = np.empty(n, np.uint8)
    pool = np.empty(d, np.int64)
    cand = np.empty(d, np.int64)

    smax = n + 2
    st_lo = np.empty(smax, np.int64)
    st_hi = np.empty(smax, np.int64)
    st_de = np.empty(smax, np.int64)
    st_pa = np.empty(smax, np.int64)
    st_lf = np.empty(smax, np.uint8)
    st_lo[0] = 0
    st_hi[0] = n
    st_de[0] = 0
    st_pa[0] = -1
    st_lf[0] = 1
    top = 1
    count = 0

    while top > 0:
        top -= 1
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_de[top]
        parent = st_pa[top]
        isleft = st_lf[top]

        node = count
        count += 1
        if parent >= 0:
            if isleft == 1:
                node_left[parent] = node
            else:
                node_right[parent] = node

        seg = hi - lo
        segf = float(seg)
        s_sum = 0.0
        s_sq = 0.0
        for i in range(lo, hi):
            v = yv[order[0, i]]
            s_sum += v
            s_sq += v * v
        base_p = s_sum * s_sum  # node impurity proxy numerator, denom = seg

        node_feat[node] = -1
        node_thr[node] = 0.0
        node_left[node] = -1
        node_right[node] = -1
        node_value[node] = s_sum / segf
        node_n[node] = seg
        node_gain[node] = 0.0

        # zero-variance check without division: n*Var = SS - S^2/n <= 0
        if seg < min_split or s_sq * segf <= base_p:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        if m_features >= d:
            m = d
            for i in range(d):
                cand[i] = i
        else:
            # partial Fisher-Yates over [0, d) from the tree stream
            m = m_features
            for i in range(d):
                pool[i] = i
            for i in range(m):
                state, z = _sm_next(state)
                j = i + np.int64(z % U64(d - i))
                t = pool[i]
                pool[i] = pool[j]
                pool[j] = t
            for i in range(m):
                cand[i] = pool[i]
            cand[:m].sort()

        # The proxy S_L^2/n_L + S_R^2/n_R is tracked as a rational p/q with
        # q = n_L*n_R and compared by cross-multiplication. On integer-valued
        # data (within float53 bounds) this makes the comparison exact, so
        # ties resolve deterministically and independent implementations of
        # the same contract agree bit-for-bit.
        best_p = -1.0
        best_q = 1.0
        best_f = -1
        best_thr = 0.0
        best_nl = 0
        for ci in range(m):
            f = cand[ci]
            if xs[f, lo] == xs[f, hi - 1]:  # constant within node
                continue
            s = 0.0
            for i in range(lo, hi - 1):
                s += yv[order[f, i]]
                xc = xs[f, i]
                xn = xs[f, i + 1]
                if xc == xn:
                    continue
                n_l = i - lo + 1
                n_r = seg - n_l
                if n_l < min_leaf or n_r < min_leaf:
                    continue
                rem = s_sum - s
                p = s * s * n_r + rem * rem * n_l
                q = float(n_l) * float(n_r)
                if p * best_q > best_p * q:
                    best_p = p
                    best_q = q
                    best_f = f
                    thr = 0.5 * (xc + xn)
                    if thr == xn:  # guard midpoint rounding up
                        thr = xc
                    best_thr = thr
                    best_nl = n_l

        # require strictly positive gain: p/q > S^2/seg
        if best_f < 0 or best_p * segf <= base_p * best_q:
            continue

        node_feat[node] = best_f
        node_thr[node] = best_thr
        node_gain[node] = best_p / best_q - base_p / segf

        # membership comes from the chosen feature's sorted positions
        mid = lo + best_nl
        for i in range(lo, hi):
            go_left[order[best_f, i]] = np.uint8(1) if i < mid else np.uint8(0)

        # stable partition of every feature's segment: left block then right
        for f in range(d):
            w = lo
            k = 0
            for i in range(lo, hi):
                p = order[f, i]
                if go_left[p] == 1:
                    order[f, w] = p
                    xs[f, w] = xs[f, i]
                    w += 1
                else:
                    tmp_o[k] = p
                    tmp_x[k] = xs[f, i]
                    k += 1
            for i in range(k):
                order[f, w + i] = tmp_o[i]
                xs[f, w + i] = tmp_x[i]

        # push right first so the left child is processed next (preorder)
        st_lo[top] = mid
        st_hi[top] = hi
        st_de[top] = depth + 1
        st_pa[top] = node
        st_lf[top] = 0
        top += 1
        st_lo[top] = lo
        st_hi[top] = mid
        st_de[top] = depth + 1
        st_pa[top] = node
        st_lf[top] = 1
        top += 1

    return count


@njit(cache=True, nogil=True)
def predict_trees(node_feat, node_thr, node_left, node_right, node_value,
                  offsets, X, out):
    """Per-tree leaf values for every query row; out has shape (T, m)."""
    n_trees = offsets.shape[0] - 1
    m = X.shape[0]
    for t in range(n_trees):
        off = offsets[t]
        for i in range(m):
            cur = 0
            while node_feat[off + cur] >= 0:
                if X[i, node_feat[off + cur]] <= node_thr[off + cur]:
                    cur = node_left[off + cur]
                else:
                    cur = node_right[off + cur]
            out[t, i] = node_value[off + cur]
