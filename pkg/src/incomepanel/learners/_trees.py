"""Compiled kernels for tree growing, prediction and TreeSHAP.

Trees are flat arrays: ``feature[k] == -1`` marks a leaf; otherwise a row
goes left when ``x[feature] <= threshold`` and follows ``missing_left`` when
the value is NaN. ``counts`` holds the class histogram of the (bootstrap)
training rows reaching a node and ``cover`` their number.
"""

import numpy as np
from numba import njit

_TIE = 1e-12


@njit(cache=True)
def _next(state):
    # xorshift64*
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return (x * np.uint64(2685821657736338717)) >> np.uint64(11)


@njit(cache=True)
def _randint(state, n):
    return np.int64(_next(state) % np.uint64(n))


@njit(cache=True)
def grow_tree(X, y, sample, n_classes, mtry, min_leaf, max_depth, seed):
    m = sample.shape[0]
    p = X.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    missing_left = np.zeros(cap, np.bool_)
    counts = np.zeros((cap, n_classes))
    cover = np.zeros(cap)

    state = np.empty(1, np.uint64)
    state[0] = np.uint64(seed) | np.uint64(1)
    for _ in range(4):
        _next(state)

    idx = sample.copy()
    buf = np.empty(m, np.int64)
    vals = np.empty(m)
    labs = np.empty(m, np.int64)
    order = np.arange(p)
    cl = np.zeros(n_classes)
    cr = np.zeros(n_classes)

    # stack of (node, start, end, depth)
    stack = np.empty((cap, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        size = end - start
        for i in range(start, end):
            counts[node, y[idx[i]]] += 1.0
        cover[node] = size
        n_present = 0
        for c in range(n_classes):
            if counts[node, c] > 0:
                n_present += 1
        if n_present <= 1 or size < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        # random feature order; visit until mtry non-constant features seen
        for j in range(p - 1, 0, -1):
            r = _randint(state, j + 1)
            t = order[j]
            order[j] = order[r]
            order[r] = t
        best_score = np.inf
        best_f = -1
        best_thr = 0.0
        best_nl = 0
        best_nr = 0
        visited = 0
        for oi in range(p):
            if visited >= mtry:
                break
            f = order[oi]
            cnt = 0
            for i in range(start, end):
                v = X[idx[i], f]
                if not np.isnan(v):
                    vals[cnt] = v
                    labs[cnt] = y[idx[i]]
                    cnt += 1
            if cnt < 2:
                continue
            srt = np.argsort(vals[:cnt], kind="mergesort")
            if vals[srt[0]] == vals[srt[cnt - 1]]:
                continue
            visited += 1
            for c in range(n_classes):
                cl[c] = 0.0
                cr[c] = 0.0
            for i in range(cnt):
                cr[labs[i]] += 1.0
            for i in range(cnt - 1):
                lab = labs[srt[i]]
                cl[lab] += 1.0
                cr[lab] -= 1.0
                v0 = vals[srt[i]]
                v1 = vals[srt[i + 1]]
                if v0 == v1:
                    continue
                nl = i + 1
                nr = cnt - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                sl = 0.0
                sr = 0.0
                for c in range(n_classes):
                    sl += cl[c] * cl[c]
                    sr += cr[c] * cr[c]
                score = (nl - sl / nl) + (nr - sr / nr)
                if score < best_score - _TIE or (abs(score - best_score) <= _TIE and f < best_f):
                    best_score = score
                    best_f = f
                    thr = 0.5 * (v0 + v1)
                    if thr >= v1:
                        thr = v0
                    best_thr = thr
                    best_nl = nl
                    best_nr = nr
        if best_f < 0:
            continue

        miss_left = best_nl >= best_nr
        lo = start
        hi = 0
        for i in range(start, end):
            r = idx[i]
            v = X[r, best_f]
            go_left = miss_left if np.isnan(v) else v <= best_thr
            if go_left:
                idx[lo] = r
                lo += 1
            else:
                buf[hi] = r
                hi += 1
        for i in range(hi):
            idx[lo + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        missing_left[node] = miss_left
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = lo
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        stack[top + 1, 0] = n_nodes
        stack[top + 1, 1] = start
        stack[top + 1, 2] = lo
        stack[top + 1, 3] = depth + 1
        top += 2
        n_nodes += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        missing_left[:n_nodes].copy(),
        counts[:n_nodes].copy(),
        cover[:n_nodes].copy(),
    )


@njit(cache=True)
def _leaf_of(x, root, feature, threshold, left, right, missing_left):
    k = root
    while feature[k] >= 0:
        v = x[feature[k]]
        if np.isnan(v):
            go_left = missing_left[k]
        else:
            go_left = v <= threshold[k]
        k = left[k] if go_left else right[k]
    return k


@njit(cache=True)
def forest_scores(X, roots, feature, threshold, left, right, missing_left, dist):
    """Mean leaf class distribution over all trees (trees concatenated, node ids global)."""
    n = X.shape[0]
    out = np.zeros((n, dist.shape[1]))
    for i in range(n):
        for t in range(roots.shape[0]):
            k = _leaf_of(X[i], roots[t], feature, threshold, left, right, missing_left)
            out[i] += dist[k]
    return out / roots.shape[0]


@njit(cache=True)
def forest_leaves(X, roots, feature, threshold, left, right, missing_left):
    n = X.shape[0]
    out = np.empty((n, roots.shape[0]), np.int64)
    for i in range(n):
        for t in range(roots.shape[0]):
            out[i, t] = _leaf_of(X[i], roots[t], feature, threshold, left, right, missing_left)
    return out


# ---------------------------------------------------------------- TreeSHAP


@njit(cache=True)
def _extend(pf, pz, po, pw, base, depth, zero, one, feat):
    pf[base + depth] = feat
    pz[base + depth] = zero
    po[base + depth] = one
    pw[base + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[base + i + 1] += one * pw[base + i] * (i + 1) / (depth + 1)
        pw[base + i] = zero * pw[base + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(pf, pz, po, pw, base, depth, k):
    one = po[base + k]
    zero = pz[base + k]
    nxt = pw[base + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[base + i]
            pw[base + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[base + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[base + i] = pw[base + i] * (depth + 1) / (zero * (depth - i))
    for i in range(k, depth):
        pf[base + i] = pf[base + i + 1]
        pz[base + i] = pz[base + i + 1]
        po[base + i] = po[base + i + 1]


@njit(cache=True)
def _unwound_sum(pz, po, pw, base, depth, k):
    one = po[base + k]
    zero = pz[base + k]
    nxt = pw[base + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one)
            total += tmp
            nxt = pw[base + i] - tmp * zero * (depth - i) / (depth + 1)
        else:
            total += pw[base + i] / zero / ((depth - i) / (depth + 1))
    return total


@njit(cache=True)
def _tree_shap(x, phi, root, feature, threshold, left, right, missing_left, cover, dist, pf, pz, po, pw, frames, fvals):
    # Explicit-stack form of the recursive algorithm. Sibling subtrees share
    # the parent's path slice, which neither of them writes to.
    frames[0, 0] = root
    frames[0, 1] = 0
    frames[0, 2] = 0
    frames[0, 3] = -1
    fvals[0, 0] = 1.0
    fvals[0, 1] = 1.0
    top = 1
    while top > 0:
        top -= 1
        node = frames[top, 0]
        parent_base = frames[top, 1]
        depth = frames[top, 2]
        feat = frames[top, 3]
        zero = fvals[top, 0]
        one = fvals[top, 1]

        base = parent_base + depth
        for i in range(depth):
            pf[base + i] = pf[parent_base + i]
            pz[base + i] = pz[parent_base + i]
            po[base + i] = po[parent_base + i]
            pw[base + i] = pw[parent_base + i]
        _extend(pf, pz, po, pw, base, depth, zero, one, feat)

        f = feature[node]
        if f < 0:
            for i in range(1, depth + 1):
                w = _unwound_sum(pz, po, pw, base, depth, i)
                scale = w * (po[base + i] - pz[base + i])
                for c in range(dist.shape[1]):
                    phi[pf[base + i], c] += scale * dist[node, c]
            continue

        v = x[f]
        if np.isnan(v):
            go_left = missing_left[node]
        else:
            go_left = v <= threshold[node]
        hot = left[node] if go_left else right[node]
        cold = right[node] if go_left else left[node]
        in_zero = 1.0
        in_one = 1.0
        k = 0
        while k <= depth:
            if pf[base + k] == f:
                break
            k += 1
        if k <= depth:
            in_zero = pz[base + k]
            in_one = po[base + k]
            _unwind(pf, pz, po, pw, base, depth, k)
            depth -= 1
        frames[top, 0] = cold
        frames[top, 1] = base
        frames[top, 2] = depth + 1
        frames[top, 3] = f
        fvals[top, 0] = cover[cold] / cover[node] * in_zero
        fvals[top, 1] = 0.0
        frames[top + 1, 0] = hot
        frames[top + 1, 1] = base
        frames[top + 1, 2] = depth + 1
        frames[top + 1, 3] = f
        fvals[top + 1, 0] = cover[hot] / cover[node] * in_zero
        fvals[top + 1, 1] = in_one
        top += 2


@njit(cache=True)
def tree_shap_batch(X, roots, depths, feature, threshold, left, right, missing_left, cover, dist):
    """Path-dependent TreeSHAP, averaged over trees.

    Returns phi of shape (n, p, n_classes). Node ids are global across the
    concatenated trees; ``depths`` holds each tree's maximum depth.
    """
    n, p = X.shape
    k = dist.shape[1]
    out = np.zeros((n, p, k))
    max_d = 0
    for t in range(roots.shape[0]):
        if depths[t] > max_d:
            max_d = depths[t]
    size = (max_d + 2) * (max_d + 3) // 2 + 1
    pf = np.zeros(size, np.int64)
    pz = np.zeros(size)
    po = np.zeros(size)
    pw = np.zeros(size)
    frames = np.zeros((2 * max_d + 4, 4), np.int64)
    fvals = np.zeros((2 * max_d + 4, 2))
    phi = np.zeros((p + 1, k))
    for i in range(n):
        for t in range(roots.shape[0]):
            phi[:] = 0.0
            _tree_shap(X[i], phi, roots[t], feature, threshold, left, right, missing_left, cover, dist,
                       pf, pz, po, pw, frames, fvals)
            out[i] += phi[:p]
    return out / roots.shape[0]
