"""Compiled tree-building and prediction kernels.

Everything here is deterministic: randomness comes from an explicit SplitMix64
state threaded through the code, node ids are assigned in level order, and
stable partitions preserve row order. The kernels release the GIL so callers
can train trees from a thread pool.

Random-forest trees use exact greedy variance-reduction splits over raw
feature values, streaming presorted column orders once per depth level.
Boosted trees use histogram split finding over pre-binned features with the
parent-minus-sibling trick (only the smaller child is re-streamed).
"""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF = np.int32(-1)

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True, inline="always")
def _next_u64(state):
    state = state + _GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True, nogil=True)
def _draw_feature_mask(state, perm, n_sub):
    """Partial Fisher-Yates over perm; returns (state, bitmask of n_sub features)."""
    d = perm.shape[0]
    mask = np.uint64(0)
    for i in range(n_sub):
        state, r = _next_u64(state)
        j = i + np.int64(r % np.uint64(d - i))
        perm[i], perm[j] = perm[j], perm[i]
        mask |= np.uint64(1) << np.uint64(perm[i])
    return state, mask


@njit(cache=True, nogil=True)
def build_rf_tree(X, y, presort, w, max_depth, n_feat_sub, min_leaf_w, seed,
                  node_feat, node_thr, node_left, node_right, node_value):
    """Grow one exact-greedy regression tree; returns the node count.

    X: (n, d) float64, y: (n,), presort: (d, n_sampled) int32 row ids sorted
    per column (stable), restricted to rows with positive weight;
    w: (n,) float64 bootstrap weights (0 = not sampled). Output arrays are
    preallocated by the caller; internal nodes split as
    ``go left iff x[feature] <= threshold``.
    """
    n, d = X.shape
    n_stream = presort.shape[1]
    cap = node_feat.shape[0]

    node_of = np.empty(n, dtype=np.int32)
    node_depth = np.empty(cap, dtype=np.int32)
    node_nw = np.zeros(cap)
    node_sum = np.zeros(cap)
    node_ymin = np.empty(cap)
    node_ymax = np.empty(cap)
    node_mask = np.zeros(cap, dtype=np.uint64)
    splittable = np.zeros(cap, dtype=np.uint8)

    best_gain = np.empty(cap)
    best_feat = np.full(cap, -1, dtype=np.int32)
    best_thr = np.empty(cap)
    st_epoch = np.empty(cap, dtype=np.int32)
    st_cnt = np.empty(cap)
    st_sum = np.empty(cap)
    st_prev = np.empty(cap)

    perm = np.arange(d, dtype=np.int32)
    state = np.uint64(seed)

    node_depth[0] = 0
    node_ymin[0] = np.inf
    node_ymax[0] = -np.inf
    for row in range(n):
        if w[row] > 0.0:
            node_of[row] = 0
            node_nw[0] += w[row]
            node_sum[0] += w[row] * y[row]
            if y[row] < node_ymin[0]:
                node_ymin[0] = y[row]
            if y[row] > node_ymax[0]:
                node_ymax[0] = y[row]
        else:
            node_of[row] = -1
    state, node_mask[0] = _draw_feature_mask(state, perm, n_feat_sub)
    node_value[0] = node_sum[0] / node_nw[0]

    node_count = 1
    level_lo = 0
    level_hi = 1

    while level_hi > level_lo:
        any_split_candidate = False
        level_mask = np.uint64(0)
        for nd in range(level_lo, level_hi):
            node_feat[nd] = LEAF
            if (node_depth[nd] < max_depth
                    and node_nw[nd] >= 2.0 * min_leaf_w
                    and node_ymin[nd] < node_ymax[nd]):
                splittable[nd] = 1
                best_gain[nd] = node_sum[nd] * node_sum[nd] / node_nw[nd]
                best_feat[nd] = -1
                st_epoch[nd] = -1
                level_mask |= node_mask[nd]
                any_split_candidate = True
            else:
                splittable[nd] = 0

        if any_split_candidate:
            for f in range(d):
                if (level_mask >> np.uint64(f)) & np.uint64(1) == np.uint64(0):
                    continue
                for pos in range(n_stream):
                    row = presort[f, pos]
                    nd = node_of[row]
                    if nd < 0 or splittable[nd] == 0:
                        continue
                    if (node_mask[nd] >> np.uint64(f)) & np.uint64(1) == np.uint64(0):
                        continue
                    v = X[row, f]
                    if st_epoch[nd] != f:
                        st_epoch[nd] = f
                        st_cnt[nd] = 0.0
                        st_sum[nd] = 0.0
                    elif v > st_prev[nd]:
                        n_l = st_cnt[nd]
                        n_r = node_nw[nd] - n_l
                        if n_l >= min_leaf_w and n_r >= min_leaf_w:
                            s_l = st_sum[nd]
                            s_r = node_sum[nd] - s_l
                            gain = s_l * s_l / n_l + s_r * s_r / n_r
                            if gain > best_gain[nd]:
                                best_gain[nd] = gain
                                best_feat[nd] = f
                                thr = 0.5 * (st_prev[nd] + v)
                                if thr >= v:
                                    thr = st_prev[nd]
                                best_thr[nd] = thr
                    st_prev[nd] = v
                    st_cnt[nd] += w[row]
                    st_sum[nd] += w[row] * y[row]

        # Materialize splits, then route rows to children and build their stats.
        next_lo = node_count
        for nd in range(level_lo, level_hi):
            if splittable[nd] == 0 or best_feat[nd] < 0 or node_count + 2 > cap:
                node_feat[nd] = LEAF
                continue
            lid = node_count
            rid = node_count + 1
            node_count += 2
            node_feat[nd] = best_feat[nd]
            node_thr[nd] = best_thr[nd]
            node_left[nd] = lid
            node_right[nd] = rid
            for cid in (lid, rid):
                node_depth[cid] = node_depth[nd] + 1
                node_nw[cid] = 0.0
                node_sum[cid] = 0.0
                node_ymin[cid] = np.inf
                node_ymax[cid] = -np.inf
                state, node_mask[cid] = _draw_feature_mask(state, perm, n_feat_sub)

        for row in range(n):
            nd = node_of[row]
            if nd < 0 or nd < level_lo:
                continue
            if node_feat[nd] == LEAF:
                node_of[row] = -1
                continue
            if X[row, node_feat[nd]] <= node_thr[nd]:
                cid = node_left[nd]
            else:
                cid = node_right[nd]
            node_of[row] = cid
            node_nw[cid] += w[row]
            node_sum[cid] += w[row] * y[row]
            if y[row] < node_ymin[cid]:
                node_ymin[cid] = y[row]
            if y[row] > node_ymax[cid]:
                node_ymax[cid] = y[row]

        for cid in range(next_lo, node_count):
            node_value[cid] = node_sum[cid] / node_nw[cid]

        level_lo = next_lo
        level_hi = node_count

    return node_count


@njit(cache=True, nogil=True)
def predict_tree(X, feat, thr, left, right, value, out):
    """Add each row's leaf value to ``out`` (raw thresholds, rule x <= thr)."""
    for i in range(X.shape[0]):
        node = 0
        while feat[node] != LEAF:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]


@njit(cache=True, nogil=True)
def predict_tree_binned(XbT, feat, thr_bin, left, right, value, scale, out):
    """Add scale * leaf value per row, traversing pre-binned columns."""
    for i in range(XbT.shape[1]):
        node = 0
        while feat[node] != LEAF:
            if XbT[feat[node], i] <= thr_bin[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += scale * value[node]


@njit(cache=True, nogil=True)
def build_gbdt_tree(XbT, grad, rows, sel, nbins, max_depth, l2, min_child_w,
                    node_feat, node_bin, node_left, node_right, node_value):
    """Grow one histogram tree on pre-binned columns; returns node count.

    XbT: (d, n) uint8 column-major bins; grad: (n,) gradients (hessian = 1
    per row); rows: subsampled row ids; sel: column ids usable by this tree;
    nbins: bins per column. ``node_feat`` stores global column ids and
    ``node_bin`` the split bin (go left iff bin <= node_bin). Leaf values are
    -G / (H + l2).
    """
    m = rows.shape[0]
    d_sel = sel.shape[0]
    n_bins_max = 256

    rows_buf = rows.copy()
    tmp = np.empty(m, dtype=rows.dtype)

    cap = node_feat.shape[0]
    node_start = np.empty(cap, dtype=np.int64)
    node_end = np.empty(cap, dtype=np.int64)
    node_depth = np.empty(cap, dtype=np.int32)
    node_g = np.empty(cap)
    node_h = np.empty(cap)

    # Histogram pool: one parent slot per depth, plus two child slots.
    hist_g = np.zeros((max_depth + 2, d_sel, n_bins_max))
    hist_c = np.zeros((max_depth + 2, d_sel, n_bins_max), dtype=np.int64)

    g_total = 0.0
    for i in range(m):
        g_total += grad[rows_buf[i]]
    node_start[0] = 0
    node_end[0] = m
    node_depth[0] = 0
    node_g[0] = g_total
    node_h[0] = float(m)
    node_value[0] = -g_total / (m + l2)

    _accumulate_hist(XbT, grad, rows_buf, 0, m, sel, hist_g[0], hist_c[0])

    # DFS over (node, hist slot); children reuse slot depth+1 alternating.
    stack_node = np.empty(2 * cap, dtype=np.int32)
    stack_hist = np.empty(2 * cap, dtype=np.int32)
    top = 0
    stack_node[top] = 0
    stack_hist[top] = 0
    top += 1
    node_count = 1

    while top > 0:
        top -= 1
        nd = stack_node[top]
        hs = stack_hist[top]
        node_feat[nd] = LEAF

        if (node_depth[nd] >= max_depth or node_h[nd] < 2.0 * min_child_w
                or node_count + 2 > cap):
            continue

        g_nd = node_g[nd]
        h_nd = node_h[nd]
        parent_score = g_nd * g_nd / (h_nd + l2)
        best_gain = 0.0
        best_j = -1
        best_b = -1
        for j in range(d_sel):
            cg = 0.0
            ch = 0.0
            for b in range(nbins[j] - 1):
                cg += hist_g[hs, j, b]
                ch += float(hist_c[hs, j, b])
                if ch < min_child_w:
                    continue
                rh = h_nd - ch
                if rh < min_child_w:
                    break
                rg = g_nd - cg
                gain = cg * cg / (ch + l2) + rg * rg / (rh + l2) - parent_score
                if gain > best_gain:
                    best_gain = gain
                    best_j = j
                    best_b = b
        if best_j < 0:
            continue

        # Stable partition of this node's rows by bin <= best_b.
        col = sel[best_j]
        lo = node_start[nd]
        hi = node_end[nd]
        n_left = 0
        g_left = 0.0
        n_right = 0
        for i in range(lo, hi):
            row = rows_buf[i]
            if XbT[col, row] <= best_b:
                rows_buf[lo + n_left] = row
                n_left += 1
                g_left += grad[row]
            else:
                tmp[n_right] = row
                n_right += 1
        for i in range(n_right):
            rows_buf[lo + n_left + i] = tmp[i]

        lid = node_count
        rid = node_count + 1
        node_count += 2
        node_feat[nd] = col
        node_bin[nd] = best_b
        node_left[nd] = lid
        node_right[nd] = rid

        node_start[lid] = lo
        node_end[lid] = lo + n_left
        node_start[rid] = lo + n_left
        node_end[rid] = hi
        node_depth[lid] = node_depth[nd] + 1
        node_depth[rid] = node_depth[nd] + 1
        node_g[lid] = g_left
        node_h[lid] = float(n_left)
        node_g[rid] = g_nd - g_left
        node_h[rid] = float(n_right)
        node_value[lid] = -node_g[lid] / (node_h[lid] + l2)
        node_value[rid] = -node_g[rid] / (node_h[rid] + l2)

        # Stream the smaller child into a fresh slot; the larger child is
        # parent minus sibling, computed in place in the parent's slot.
        # Children that are already at max depth never split, so skip their
        # histograms entirely (they exit as leaves when popped).
        if n_left <= n_right:
            small, big = lid, rid
        else:
            small, big = rid, lid
        hs_small = hs + 1
        hs_big = hs
        if node_depth[lid] < max_depth:
            _clear_hist(hist_g[hs_small], hist_c[hs_small], nbins)
            _accumulate_hist(XbT, grad, rows_buf, node_start[small], node_end[small],
                             sel, hist_g[hs_small], hist_c[hs_small])
            _subtract_hist(hist_g[hs], hist_c[hs], hist_g[hs_small], hist_c[hs_small],
                           hist_g[hs_big], hist_c[hs_big], nbins)

        stack_node[top] = big
        stack_hist[top] = hs_big
        top += 1
        stack_node[top] = small
        stack_hist[top] = hs_small
        top += 1

    return node_count


@njit(cache=True, nogil=True, inline="always")
def _accumulate_hist(XbT, grad, rows_buf, lo, hi, sel, hg, hc):
    for i in range(lo, hi):
        row = rows_buf[i]
        g = grad[row]
        for j in range(sel.shape[0]):
            b = XbT[sel[j], row]
            hg[j, b] += g
            hc[j, b] += 1


@njit(cache=True, nogil=True, inline="always")
def _clear_hist(hg, hc, nbins):
    for j in range(nbins.shape[0]):
        for b in range(nbins[j]):
            hg[j, b] = 0.0
            hc[j, b] = 0


@njit(cache=True, nogil=True, inline="always")
def _subtract_hist(pg, pc, sg, sc, og, oc, nbins):
    for j in range(nbins.shape[0]):
        for b in range(nbins[j]):
            og[j, b] = pg[j, b] - sg[j, b]
            oc[j, b] = pc[j, b] - sc[j, b]
