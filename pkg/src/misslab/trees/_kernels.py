"""Numba kernels for CART building and routing.

Trees are flat parallel arrays. Split kinds: 0 routes left when
``x <= thr`` (metric/ordinal/high-cardinality nominal on codes), 1 routes
left when ``x == thr`` (one-vs-rest nominal). Regression and boosted trees
share one builder parameterized by per-row (t, h) statistics with leaf value
``sum(t) / (sum(h) + lam)``; plain regression passes t = y, h = 1, lam = 0,
which makes gain maximization identical to SSE minimization. Classification
uses a Gini builder over class counts.

Builders use presorted feature orders (matrix ``S``, one row of sorted row
positions per feature) maintained through every partition, so no per-node
sorting happens. All kernels are single-threaded and seeded; identical
inputs give bit-identical outputs.
"""

import numpy as np
from numba import njit

LEAF = -1
_EPS_GAIN = 1e-12


@njit(cache=True)
def sorted_positions(ranks, n_base):
    """Stable counting sort: positions ordered by integer rank in [0, n_base)."""
    n = ranks.shape[0]
    cnt = np.zeros(n_base + 1, dtype=np.int64)
    for i in range(n):
        cnt[ranks[i] + 1] += 1
    for r in range(n_base):
        cnt[r + 1] += cnt[r]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[cnt[ranks[i]]] = i
        cnt[ranks[i]] += 1
    return out


@njit(cache=True)
def seen_level_masks(X, levels):
    """Per-feature bitmask of level codes present (0 for metric features)."""
    n, p = X.shape
    seen = np.zeros(p, dtype=np.int64)
    for f in range(p):
        if levels[f] <= 0:
            continue
        acc = np.int64(0)
        for i in range(n):
            v = int(X[i, f])
            if v < 0 or v > 63:
                raise ValueError("level code outside 0..63")
            acc |= np.int64(1) << np.int64(v)
        seen[f] = acc
    return seen


@njit(cache=True)
def leaf_sd_stats(feature, node_start, node_count, row_perm, y):
    """Per-node standard deviation of y over each leaf's row segment."""
    n_nodes = feature.shape[0]
    sd = np.zeros(n_nodes)
    for node in range(n_nodes):
        if feature[node] != LEAF:
            continue
        s = node_start[node]
        c = node_count[node]
        m = 0.0
        for i in range(c):
            m += y[row_perm[s + i]]
        m /= c
        acc = 0.0
        for i in range(c):
            d = y[row_perm[s + i]] - m
            acc += d * d
        sd[node] = np.sqrt(acc / c)
    return sd


@njit(cache=True)
def leaf_class_counts(feature, node_start, node_count, row_perm, y, n_classes):
    """Per-node class counts over each leaf's row segment."""
    n_nodes = feature.shape[0]
    counts = np.zeros((n_nodes, n_classes))
    for node in range(n_nodes):
        if feature[node] != LEAF:
            continue
        s = node_start[node]
        for i in range(node_count[node]):
            counts[node, y[row_perm[s + i]]] += 1.0
    return counts


@njit(cache=True)
def _sample_features(p, mtry, order):
    # partial Fisher-Yates; `order` is a reusable workspace of size p
    for i in range(p):
        order[i] = i
    m = mtry if 0 < mtry < p else p
    for i in range(m):
        j = i + np.random.randint(0, p - i)
        tmp = order[i]
        order[i] = order[j]
        order[j] = tmp
    return m


@njit(cache=True)
def _node_capacity(n, min_leaf, max_depth):
    cap = 2 * (n // (min_leaf if min_leaf > 0 else 1)) + 3
    if 0 < max_depth < 40:
        by_depth = 2 ** (max_depth + 1) + 1
        if by_depth < cap:
            cap = by_depth
    return cap


@njit(cache=True)
def _partition_all(S, p, start, count, left_mark, buf):
    """Stable-partition every feature's sorted segment by left membership."""
    nl = 0
    for i in range(count):
        if left_mark[S[0, start + i]]:
            nl += 1
    for f in range(p):
        a = 0
        b = nl
        for i in range(count):
            r = S[f, start + i]
            if left_mark[r]:
                buf[a] = r
                a += 1
            else:
                buf[b] = r
                b += 1
        for i in range(count):
            S[f, start + i] = buf[i]
    return nl


@njit(cache=True)
def build_tree_gh(X, t, h, S, feat_kind, n_levels, max_depth, min_leaf,
                  min_child_weight, lam, mtry, seed):
    """Greedy gain-maximizing tree on gradient-style statistics.

    ``S`` is the (p, n) presorted-position matrix (consumed destructively).
    Returns flat arrays (feature, kind, thr, left, right, value,
    node_start, node_count, row_perm, n_nodes).
    """
    np.random.seed(seed)
    n, p = X.shape
    eff_min_leaf = min_leaf if min_leaf > 0 else 1
    cap = _node_capacity(n, eff_min_leaf, max_depth)
    depth_cap = max_depth if max_depth > 0 else 10 ** 9

    feature = np.full(cap, LEAF, dtype=np.int32)
    kind = np.zeros(cap, dtype=np.int8)
    thr = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, LEAF, dtype=np.int32)
    right = np.full(cap, LEAF, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    node_start = np.zeros(cap, dtype=np.int64)
    node_count = np.zeros(cap, dtype=np.int64)

    order = np.empty(p, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    left_mark = np.zeros(n, dtype=np.bool_)
    max_lvl = 0
    for f in range(p):
        if n_levels[f] > max_lvl:
            max_lvl = n_levels[f]
    lvl_t = np.zeros(max_lvl + 1, dtype=np.float64)
    lvl_h = np.zeros(max_lvl + 1, dtype=np.float64)
    lvl_n = np.zeros(max_lvl + 1, dtype=np.int64)

    # DFS stack: (node, start, count, depth)
    stack = np.empty((cap + 2, 4), dtype=np.int64)
    top = 0
    stack[top, 0] = 0
    stack[top, 1] = 0
    stack[top, 2] = n
    stack[top, 3] = 0
    top += 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        count = stack[top, 2]
        depth = stack[top, 3]

        G = 0.0
        H = 0.0
        for i in range(count):
            r = S[0, start + i]
            G += t[r]
            H += h[r]
        node_start[node] = start
        node_count[node] = count
        value[node] = G / (H + lam) if (H + lam) > 0.0 else 0.0

        if depth >= depth_cap or count < 2 * eff_min_leaf or n_nodes + 2 > cap:
            continue
        parent_score = G * G / (H + lam) if (H + lam) > 0.0 else 0.0

        best_score = -np.inf
        best_f = -1
        best_thr = 0.0
        best_kind = np.int8(0)

        m = _sample_features(p, mtry, order)
        for fi in range(m):
            f = order[fi]
            if feat_kind[f] == 0:
                gl = 0.0
                hl = 0.0
                for c in range(count - 1):
                    r = S[f, start + c]
                    gl += t[r]
                    hl += h[r]
                    v0 = X[r, f]
                    v1 = X[S[f, start + c + 1], f]
                    if v0 == v1:
                        continue
                    nl = c + 1
                    nr = count - nl
                    if nl < eff_min_leaf or nr < eff_min_leaf:
                        continue
                    hr = H - hl
                    if hl < min_child_weight or hr < min_child_weight:
                        continue
                    gr = G - gl
                    score = gl * gl / (hl + lam) + gr * gr / (hr + lam)
                    if score > best_score + _EPS_GAIN:
                        best_score = score
                        best_f = f
                        best_thr = 0.5 * (v0 + v1)
                        best_kind = np.int8(0)
            else:
                L = n_levels[f]
                for v in range(L):
                    lvl_t[v] = 0.0
                    lvl_h[v] = 0.0
                    lvl_n[v] = 0
                for i in range(count):
                    r = S[f, start + i]
                    v = int(X[r, f])
                    lvl_t[v] += t[r]
                    lvl_h[v] += h[r]
                    lvl_n[v] += 1
                for v in range(L):
                    nl = lvl_n[v]
                    nr = count - nl
                    if nl < eff_min_leaf or nr < eff_min_leaf:
                        continue
                    hl = lvl_h[v]
                    hr = H - hl
                    if hl < min_child_weight or hr < min_child_weight:
                        continue
                    gl = lvl_t[v]
                    gr = G - gl
                    score = gl * gl / (hl + lam) + gr * gr / (hr + lam)
                    if score > best_score + _EPS_GAIN:
                        best_score = score
                        best_f = f
                        best_thr = float(v)
                        best_kind = np.int8(1)

        if best_f < 0 or best_score <= parent_score + _EPS_GAIN:
            continue

        for i in range(count):
            r = S[0, start + i]
            x = X[r, best_f]
            left_mark[r] = (x == best_thr) if best_kind == 1 else (x <= best_thr)
        nl = _partition_all(S, p, start, count, left_mark, buf)
        for i in range(count):
            left_mark[S[0, start + i]] = False

        feature[node] = best_f
        kind[node] = best_kind
        thr[node] = best_thr
        lid = n_nodes
        rid = n_nodes + 1
        left[node] = lid
        right[node] = rid
        n_nodes += 2
        stack[top, 0] = lid
        stack[top, 1] = start
        stack[top, 2] = nl
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = rid
        stack[top, 1] = start + nl
        stack[top, 2] = count - nl
        stack[top, 3] = depth + 1
        top += 1

    row_perm = S[0].copy()
    return (feature[:n_nodes], kind[:n_nodes], thr[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes], node_start[:n_nodes],
            node_count[:n_nodes], row_perm, n_nodes)


@njit(cache=True)
def build_tree_gini(X, y, n_classes, S, feat_kind, n_levels, max_depth,
                    min_leaf, mtry, seed):
    """Greedy Gini-minimizing classification tree (same layout as build_tree_gh)."""
    np.random.seed(seed)
    n, p = X.shape
    K = n_classes
    eff_min_leaf = min_leaf if min_leaf > 0 else 1
    cap = _node_capacity(n, eff_min_leaf, max_depth)
    depth_cap = max_depth if max_depth > 0 else 10 ** 9

    feature = np.full(cap, LEAF, dtype=np.int32)
    kind = np.zeros(cap, dtype=np.int8)
    thr = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, LEAF, dtype=np.int32)
    right = np.full(cap, LEAF, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    node_start = np.zeros(cap, dtype=np.int64)
    node_count = np.zeros(cap, dtype=np.int64)

    order = np.empty(p, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    left_mark = np.zeros(n, dtype=np.bool_)
    cnt = np.zeros(K, dtype=np.int64)
    cl = np.zeros(K, dtype=np.float64)
    max_lvl = 0
    for f in range(p):
        if n_levels[f] > max_lvl:
            max_lvl = n_levels[f]
    lvl_cnt = np.zeros((max_lvl + 1, K), dtype=np.float64)
    lvl_n = np.zeros(max_lvl + 1, dtype=np.int64)

    stack = np.empty((cap + 2, 4), dtype=np.int64)
    top = 0
    stack[top, 0] = 0
    stack[top, 1] = 0
    stack[top, 2] = n
    stack[top, 3] = 0
    top += 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        count = stack[top, 2]
        depth = stack[top, 3]

        for k in range(K):
            cnt[k] = 0
        for i in range(count):
            cnt[y[S[0, start + i]]] += 1
        best_k = 0
        n_present = 0
        for k in range(K):
            if cnt[k] > cnt[best_k]:
                best_k = k
            if cnt[k] > 0:
                n_present += 1
        node_start[node] = start
        node_count[node] = count
        value[node] = float(best_k)

        if (depth >= depth_cap or count < 2 * eff_min_leaf or n_present <= 1
                or n_nodes + 2 > cap):
            continue
        parent_score = 0.0
        for k in range(K):
            parent_score += float(cnt[k]) * float(cnt[k])
        parent_score /= count

        best_score = -np.inf
        best_f = -1
        best_thr = 0.0
        best_kind = np.int8(0)

        m = _sample_features(p, mtry, order)
        for fi in range(m):
            f = order[fi]
            if feat_kind[f] == 0:
                for k in range(K):
                    cl[k] = 0.0
                sql = 0.0  # running sum over k of left-count(k)^2
                for c in range(count - 1):
                    r = S[f, start + c]
                    k = y[r]
                    sql += 2.0 * cl[k] + 1.0
                    cl[k] += 1.0
                    v0 = X[r, f]
                    v1 = X[S[f, start + c + 1], f]
                    if v0 == v1:
                        continue
                    nl = c + 1
                    nr = count - nl
                    if nl < eff_min_leaf or nr < eff_min_leaf:
                        continue
                    sqr = 0.0
                    for k in range(K):
                        d = cnt[k] - cl[k]
                        sqr += d * d
                    score = sql / nl + sqr / nr
                    if score > best_score + _EPS_GAIN:
                        best_score = score
                        best_f = f
                        best_thr = 0.5 * (v0 + v1)
                        best_kind = np.int8(0)
            else:
                L = n_levels[f]
                for v in range(L):
                    lvl_n[v] = 0
                    for k in range(K):
                        lvl_cnt[v, k] = 0.0
                for i in range(count):
                    r = S[f, start + i]
                    lvl_cnt[int(X[r, f]), y[r]] += 1.0
                    lvl_n[int(X[r, f])] += 1
                for v in range(L):
                    nl = lvl_n[v]
                    nr = count - nl
                    if nl < eff_min_leaf or nr < eff_min_leaf:
                        continue
                    sql = 0.0
                    sqr = 0.0
                    for k in range(K):
                        a = lvl_cnt[v, k]
                        b = cnt[k] - a
                        sql += a * a
                        sqr += b * b
                    score = sql / nl + sqr / nr
                    if score > best_score + _EPS_GAIN:
                        best_score = score
                        best_f = f
                        best_thr = float(v)
                        best_kind = np.int8(1)

        if best_f < 0 or best_score <= parent_score + _EPS_GAIN:
            continue

        for i in range(count):
            r = S[0, start + i]
            x = X[r, best_f]
            left_mark[r] = (x == best_thr) if best_kind == 1 else (x <= best_thr)
        nl = _partition_all(S, p, start, count, left_mark, buf)
        for i in range(count):
            left_mark[S[0, start + i]] = False

        feature[node] = best_f
        kind[node] = best_kind
        thr[node] = best_thr
        lid = n_nodes
        rid = n_nodes + 1
        left[node] = lid
        right[node] = rid
        n_nodes += 2
        stack[top, 0] = lid
        stack[top, 1] = start
        stack[top, 2] = nl
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = rid
        stack[top, 1] = start + nl
        stack[top, 2] = count - nl
        stack[top, 3] = depth + 1
        top += 1

    row_perm = S[0].copy()
    return (feature[:n_nodes], kind[:n_nodes], thr[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes], node_start[:n_nodes],
            node_count[:n_nodes], row_perm, n_nodes)


@njit(cache=True)
def route_rows(X, feature, kind, thr, left, right, node_count, is_cat,
               seen_mask):
    """Leaf id per row; unseen categorical levels follow the larger child."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            f = feature[node]
            x = X[i, f]
            unseen = False
            if is_cat[f]:
                v = int(x)
                if v < 0 or v > 63 or (seen_mask[f] >> v) & 1 == 0:
                    unseen = True
            if unseen:
                if node_count[left[node]] >= node_count[right[node]]:
                    node = left[node]
                else:
                    node = right[node]
            elif kind[node] == 1:
                node = left[node] if x == thr[node] else right[node]
            else:
                node = left[node] if x <= thr[node] else right[node]
        out[i] = node
    return out
