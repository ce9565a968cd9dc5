"""JIT kernels for CART tree induction and traversal on flat node arrays.

One kernel covers classification and regression: for binary 0/1 targets the
variance criterion equals Gini impurity up to a constant factor, so minimizing
child SSE picks exactly the Gini-optimal split with the same tie structure.
Leaves store (target sum, row count); the positive fraction or mean is their
ratio.

Determinism: candidate features are visited in ascending index order and
numeric thresholds ascending, a split is accepted only on strict improvement,
and the per-node feature subsample comes from a SplitMix64 stream derived
from (tree seed, node id). Nothing depends on thread scheduling.

Categorical features are routed by an int64 bitmask of left-going category
codes, which caps categorical arity at 63 (checked by callers).
"""

import numpy as np
from numba import njit

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_ONE64 = np.uint64(1)

NO_DEPTH_LIMIT = 2**31


@njit(cache=True, nogil=True)
def _mix(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _MIX1
    z = z ^ (z >> np.uint64(27))
    z = z * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def build_tree(X, y, rows, kinds, mtry, min_node_size, min_child, max_depth, seed):
    """Grow one tree on X[rows], y[rows]; returns trimmed flat node arrays.

    Returns (feature, threshold, catmask, left, right, vsum, vcount).
    feature[i] == -1 marks a leaf; vsum/vcount hold the node's target sum
    and row count (filled for every node, not just leaves).
    """
    n_total = rows.shape[0]
    p = X.shape[1]
    max_nodes = 2 * n_total + 1

    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.full(max_nodes, np.nan, np.float64)
    catmask = np.zeros(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    vsum = np.zeros(max_nodes, np.float64)
    vcount = np.zeros(max_nodes, np.float64)

    order = rows.copy()
    buf = np.empty(n_total, np.int64)

    stack_node = np.empty(max_nodes, np.int64)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n_total
    stack_depth[0] = 0
    sp = 1
    node_count = 1

    pool = np.empty(p, np.int64)
    chosen = np.empty(p, np.int64)
    cat_sum = np.zeros(64, np.float64)
    cat_ssq = np.zeros(64, np.float64)
    cat_cnt = np.zeros(64, np.float64)
    cat_ord = np.empty(64, np.int64)

    while sp > 0:
        sp -= 1
        nid = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        depth = stack_depth[sp]
        m = hi - lo

        tsum = 0.0
        tssq = 0.0
        for i in range(lo, hi):
            v = y[order[i]]
            tsum += v
            tssq += v * v
        vsum[nid] = tsum
        vcount[nid] = m
        parent_sse = tssq - tsum * tsum / m
        if m <= min_node_size or parent_sse <= 0.0 or depth >= max_depth:
            continue

        # mtry-subset of features via partial Fisher-Yates, then sorted so
        # the strict-improvement scan breaks ties toward the lowest index
        state = _mix(seed + (np.uint64(nid) + _ONE64) * _GOLD)
        for j in range(p):
            pool[j] = j
        k = mtry if mtry < p else p
        for j in range(k):
            state = state + _GOLD
            r = j + np.int64(_mix(state) % np.uint64(p - j))
            tmp = pool[j]
            pool[j] = pool[r]
            pool[r] = tmp
            chosen[j] = pool[j]
        for j in range(1, k):
            key = chosen[j]
            i = j - 1
            while i >= 0 and chosen[i] > key:
                chosen[i + 1] = chosen[i]
                i -= 1
            chosen[i + 1] = key

        best_sse = parent_sse
        best_f = np.int64(-1)
        best_t = 0.0
        best_mask = np.int64(0)
        best_is_cat = False

        for jj in range(k):
            f = chosen[jj]
            if kinds[f] == 0:
                vals = np.empty(m, np.float64)
                ys = np.empty(m, np.float64)
                for i in range(m):
                    r = order[lo + i]
                    vals[i] = X[r, f]
                    ys[i] = y[r]
                idx = np.argsort(vals)
                ls = 0.0
                lq = 0.0
                for i in range(m - 1):
                    v = ys[idx[i]]
                    ls += v
                    lq += v * v
                    vi = vals[idx[i]]
                    vn = vals[idx[i + 1]]
                    if vn <= vi:
                        continue
                    nl = i + 1
                    nr = m - nl
                    if nl < min_child or nr < min_child:
                        continue
                    rs = tsum - ls
                    rq = tssq - lq
                    child = (lq - ls * ls / nl) + (rq - rs * rs / nr)
                    if child < best_sse:
                        best_sse = child
                        best_f = f
                        best_t = 0.5 * (vi + vn)
                        best_is_cat = False
            else:
                for c in range(64):
                    cat_sum[c] = 0.0
                    cat_ssq[c] = 0.0
                    cat_cnt[c] = 0.0
                for i in range(lo, hi):
                    r = order[i]
                    c = np.int64(X[r, f])
                    v = y[r]
                    cat_sum[c] += v
                    cat_ssq[c] += v * v
                    cat_cnt[c] += 1.0
                npresent = 0
                for c in range(64):
                    if cat_cnt[c] > 0.0:
                        cat_ord[npresent] = c
                        npresent += 1
                if npresent < 2:
                    continue
                # order categories by mean target; stable insertion sort keeps
                # equal means in ascending code order (optimal prefix cuts)
                for j in range(1, npresent):
                    key = cat_ord[j]
                    key_mean = cat_sum[key] / cat_cnt[key]
                    i = j - 1
                    while i >= 0 and cat_sum[cat_ord[i]] / cat_cnt[cat_ord[i]] > key_mean:
                        cat_ord[i + 1] = cat_ord[i]
                        i -= 1
                    cat_ord[i + 1] = key
                ls = 0.0
                lq = 0.0
                lcnt = 0.0
                for j in range(npresent - 1):
                    c = cat_ord[j]
                    ls += cat_sum[c]
                    lq += cat_ssq[c]
                    lcnt += cat_cnt[c]
                    nl = lcnt
                    nr = m - nl
                    if nl < min_child or nr < min_child:
                        continue
                    rs = tsum - ls
                    rq = tssq - lq
                    child = (lq - ls * ls / nl) + (rq - rs * rs / nr)
                    if child < best_sse:
                        best_sse = child
                        best_f = f
                        best_is_cat = True
                        mask = np.int64(0)
                        for t in range(j + 1):
                            mask |= np.int64(1) << cat_ord[t]
                        best_mask = mask

        if best_f < 0:
            continue

        # stable partition with the same predicate prediction will use
        cnt_l = 0
        for i in range(lo, hi):
            r = order[i]
            if best_is_cat:
                go_left = ((best_mask >> np.int64(X[r, best_f])) & np.int64(1)) == 1
            else:
                go_left = X[r, best_f] <= best_t
            if go_left:
                buf[cnt_l] = r
                cnt_l += 1
        if cnt_l == 0 or cnt_l == m:
            continue
        cnt = cnt_l
        for i in range(lo, hi):
            r = order[i]
            if best_is_cat:
                go_left = ((best_mask >> np.int64(X[r, best_f])) & np.int64(1)) == 1
            else:
                go_left = X[r, best_f] <= best_t
            if not go_left:
                buf[cnt] = r
                cnt += 1
        for i in range(m):
            order[lo + i] = buf[i]

        lid = node_count
        rid = node_count + 1
        node_count += 2
        feature[nid] = best_f
        if best_is_cat:
            catmask[nid] = best_mask
        else:
            threshold[nid] = best_t
        left[nid] = lid
        right[nid] = rid
        stack_node[sp] = rid
        stack_lo[sp] = lo + cnt_l
        stack_hi[sp] = hi
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lid
        stack_lo[sp] = lo
        stack_hi[sp] = lo + cnt_l
        stack_depth[sp] = depth + 1
        sp += 1

    return (
        feature[:node_count].copy(),
        threshold[:node_count].copy(),
        catmask[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        vsum[:node_count].copy(),
        vcount[:node_count].copy(),
    )


@njit(cache=True, nogil=True)
def apply_tree(Xq, kinds, feature, threshold, catmask, left, right):
    """Leaf node index for every query row of one tree."""
    nq = Xq.shape[0]
    out = np.empty(nq, np.int64)
    for i in range(nq):
        nid = 0
        while feature[nid] >= 0:
            f = feature[nid]
            if kinds[f] == 0:
                if Xq[i, f] <= threshold[nid]:
                    nid = left[nid]
                else:
                    nid = right[nid]
            else:
                c = np.int64(Xq[i, f])
                if ((catmask[nid] >> c) & np.int64(1)) == 1:
                    nid = left[nid]
                else:
                    nid = right[nid]
        out[i] = nid
    return out


@njit(cache=True, nogil=True)
def predict_mean_sum(Xq, kinds, feature, threshold, catmask, left, right, vsum, vcount, offsets, out):
    """Add each tree's leaf mean to out (callers divide by the tree count).

    Node arrays are the concatenation of every tree's arrays; offsets[t] is
    tree t's base index and child indices are tree-local.
    """
    nq = Xq.shape[0]
    n_trees = offsets.shape[0] - 1
    for i in range(nq):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            nid = base
            while feature[nid] >= 0:
                f = feature[nid]
                if kinds[f] == 0:
                    if Xq[i, f] <= threshold[nid]:
                        nid = base + left[nid]
                    else:
                        nid = base + right[nid]
                else:
                    c = np.int64(Xq[i, f])
                    if ((catmask[nid] >> c) & np.int64(1)) == 1:
                        nid = base + left[nid]
                    else:
                        nid = base + right[nid]
            acc += vsum[nid] / vcount[nid]
        out[i] = acc
