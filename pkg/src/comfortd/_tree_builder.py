"""Low-level CART construction kernels (numba-compiled, flat node arrays).

Trees are built depth-first into preallocated arrays: ``feature[node] == -1``
marks a leaf, interior nodes route ``x[feature] <= threshold`` to ``left``.
All randomness comes from an in-kernel splitmix64 stream seeded per tree, so
results do not depend on Python-level RNG state or on training parallelism.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

MASK64 = 0xFFFFFFFFFFFFFFFF


def derive_seed(base_seed: int, index: int) -> int:
    """Splitmix-style stream derivation: mix(base + (index+1) * gamma).

    Used for per-tree and per-round seeds so that any training schedule
    (sequential or parallel) sees the same randomness.
    """
    z = (int(base_seed) + (index + 1) * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


@njit(cache=True)
def _rng_uniform(state):
    state = state + _GAMMA
    z = state
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    return state, float(z >> _S11) * _INV53


@njit(cache=True)
def _gini(cw, wsum):
    if wsum <= 0.0:
        return 0.0
    s = 0.0
    for c in range(cw.shape[0]):
        p = cw[c] / wsum
        s += p * p
    return 1.0 - s


@njit(cache=True)
def _store_leaf(node, start, end, idx, y, w, is_classif, n_classes, wsum, leaf_value):
    if is_classif:
        for c in range(n_classes):
            leaf_value[node, c] = 0.0
        for i in range(start, end):
            r = idx[i]
            leaf_value[node, int(y[r])] += w[r]
        if wsum > 0:
            for c in range(n_classes):
                leaf_value[node, c] /= wsum
    else:
        s = 0.0
        for i in range(start, end):
            r = idx[i]
            s += w[r] * y[r]
        leaf_value[node, 0] = s / wsum if wsum > 0 else 0.0


@njit(cache=True)
def build_tree(
    X,
    y,
    w,
    is_classif,
    n_classes,
    max_depth,
    min_samples_leaf,
    min_samples_split,
    random_split,
    m_features,
    seed,
    feature,
    threshold,
    left,
    right,
    leaf_value,
    importances,
):
    """Grow one tree in place. Returns the number of nodes written.

    Split search order is deterministic: candidate features are visited in
    ascending index order and improvements must be strict, so impurity ties
    resolve to the lowest feature index and, within a feature, the lowest
    threshold.
    """
    n, n_feat = X.shape
    idx = np.arange(n)
    cap = feature.shape[0]
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    top = 1
    node_count = 1
    state = np.uint64(seed)
    perm = np.empty(n_feat, np.int64)
    cw = np.zeros(n_classes)
    cwl = np.zeros(n_classes)
    cwr = np.zeros(n_classes)
    sv = np.empty(n)
    sy = np.empty(n)
    sw = np.empty(n)
    total_w = 0.0
    for i in range(n):
        total_w += w[i]

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        n_node = end - start

        wsum = 0.0
        ymin = np.inf
        ymax = -np.inf
        if is_classif:
            for c in range(n_classes):
                cw[c] = 0.0
            for i in range(start, end):
                r = idx[i]
                cw[int(y[r])] += w[r]
                wsum += w[r]
                if y[r] < ymin:
                    ymin = y[r]
                if y[r] > ymax:
                    ymax = y[r]
            imp = _gini(cw, wsum)
        else:
            swy = 0.0
            for i in range(start, end):
                r = idx[i]
                wsum += w[r]
                swy += w[r] * y[r]
                if y[r] < ymin:
                    ymin = y[r]
                if y[r] > ymax:
                    ymax = y[r]
            mean = swy / wsum if wsum > 0 else 0.0
            ss = 0.0
            for i in range(start, end):
                r = idx[i]
                d = y[r] - mean
                ss += w[r] * d * d
            imp = ss / wsum if wsum > 0 else 0.0

        pure = ymin == ymax
        if (
            pure
            or depth >= max_depth
            or n_node < min_samples_split
            or n_node < 2 * min_samples_leaf
        ):
            _store_leaf(node, start, end, idx, y, w, is_classif, n_classes, wsum, leaf_value)
            feature[node] = -1
            threshold[node] = 0.0
            left[node] = -1
            right[node] = -1
            continue

        m = m_features if m_features < n_feat else n_feat
        for j in range(n_feat):
            perm[j] = j
        for j in range(m):
            state, u = _rng_uniform(state)
            k = j + int(u * (n_feat - j))
            if k > n_feat - 1:
                k = n_feat - 1
            tmp = perm[j]
            perm[j] = perm[k]
            perm[k] = tmp
        sel = np.sort(perm[:m])

        best_dec = -1.0
        best_f = -1
        best_thr = 0.0
        best_wl = 0.0
        best_il = 0.0
        best_ir = 0.0

        for s_i in range(m):
            f = sel[s_i]
            if random_split == 1:
                vmin = np.inf
                vmax = -np.inf
                for i in range(start, end):
                    v = X[idx[i], f]
                    if v < vmin:
                        vmin = v
                    if v > vmax:
                        vmax = v
                if vmax <= vmin:
                    continue
                state, u = _rng_uniform(state)
                thr = vmin + u * (vmax - vmin)
                if thr >= vmax:
                    thr = vmin
                if is_classif:
                    for c in range(n_classes):
                        cwl[c] = 0.0
                    wl = 0.0
                    nl = 0
                    for i in range(start, end):
                        r = idx[i]
                        if X[r, f] <= thr:
                            cwl[int(y[r])] += w[r]
                            wl += w[r]
                            nl += 1
                    if nl < min_samples_leaf or n_node - nl < min_samples_leaf:
                        continue
                    for c in range(n_classes):
                        cwr[c] = cw[c] - cwl[c]
                    il = _gini(cwl, wl)
                    ir = _gini(cwr, wsum - wl)
                else:
                    wl = 0.0
                    syl = 0.0
                    syr = 0.0
                    nl = 0
                    for i in range(start, end):
                        r = idx[i]
                        if X[r, f] <= thr:
                            wl += w[r]
                            syl += w[r] * y[r]
                            nl += 1
                        else:
                            syr += w[r] * y[r]
                    if nl < min_samples_leaf or n_node - nl < min_samples_leaf:
                        continue
                    wr = wsum - wl
                    ml = syl / wl if wl > 0 else 0.0
                    mr = syr / wr if wr > 0 else 0.0
                    ssl = 0.0
                    ssr = 0.0
                    for i in range(start, end):
                        r = idx[i]
                        if X[r, f] <= thr:
                            d = y[r] - ml
                            ssl += w[r] * d * d
                        else:
                            d = y[r] - mr
                            ssr += w[r] * d * d
                    il = ssl / wl if wl > 0 else 0.0
                    ir = ssr / wr if wr > 0 else 0.0
                wl_w = wl
                dec = imp - (wl_w * il + (wsum - wl_w) * ir) / wsum
                if dec > best_dec:
                    best_dec = dec
                    best_f = f
                    best_thr = thr
                    best_wl = wl_w
                    best_il = il
                    best_ir = ir
            else:
                nn = 0
                for i in range(start, end):
                    r = idx[i]
                    sv[nn] = X[r, f]
                    sy[nn] = y[r]
                    sw[nn] = w[r]
                    nn += 1
                order = np.argsort(sv[:nn], kind="mergesort")
                if is_classif:
                    for c in range(n_classes):
                        cwl[c] = 0.0
                    wl = 0.0
                    for i in range(nn - 1):
                        o = order[i]
                        cwl[int(sy[o])] += sw[o]
                        wl += sw[o]
                        v0 = sv[o]
                        v1 = sv[order[i + 1]]
                        if v1 <= v0:
                            continue
                        if (i + 1) < min_samples_leaf or (nn - i - 1) < min_samples_leaf:
                            continue
                        for c in range(n_classes):
                            cwr[c] = cw[c] - cwl[c]
                        il = _gini(cwl, wl)
                        ir = _gini(cwr, wsum - wl)
                        dec = imp - (wl * il + (wsum - wl) * ir) / wsum
                        if dec > best_dec:
                            best_dec = dec
                            best_f = f
                            best_thr = 0.5 * (v0 + v1)
                            best_wl = wl
                            best_il = il
                            best_ir = ir
                else:
                    swy_t = 0.0
                    swy2_t = 0.0
                    for i in range(nn):
                        swy_t += sw[i] * sy[i]
                        swy2_t += sw[i] * sy[i] * sy[i]
                    wl = 0.0
                    syl = 0.0
                    syl2 = 0.0
                    for i in range(nn - 1):
                        o = order[i]
                        wl += sw[o]
                        syl += sw[o] * sy[o]
                        syl2 += sw[o] * sy[o] * sy[o]
                        v0 = sv[o]
                        v1 = sv[order[i + 1]]
                        if v1 <= v0:
                            continue
                        if (i + 1) < min_samples_leaf or (nn - i - 1) < min_samples_leaf:
                            continue
                        wr = wsum - wl
                        syr = swy_t - syl
                        syr2 = swy2_t - syl2
                        il = syl2 / wl - (syl / wl) * (syl / wl)
                        ir = syr2 / wr - (syr / wr) * (syr / wr)
                        if il < 0.0:
                            il = 0.0
                        if ir < 0.0:
                            ir = 0.0
                        dec = imp - (wl * il + wr * ir) / wsum
                        if dec > best_dec:
                            best_dec = dec
                            best_f = f
                            best_thr = 0.5 * (v0 + v1)
                            best_wl = wl
                            best_il = il
                            best_ir = ir

        if best_f < 0:
            _store_leaf(node, start, end, idx, y, w, is_classif, n_classes, wsum, leaf_value)
            feature[node] = -1
            threshold[node] = 0.0
            left[node] = -1
            right[node] = -1
            continue

        i = start
        j = end - 1
        while i <= j:
            if X[idx[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        mid = i

        importances[best_f] += (
            wsum * imp - best_wl * best_il - (wsum - best_wl) * best_ir
        ) / total_w

        lid = node_count
        rid = node_count + 1
        node_count += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lid
        right[node] = rid
        st_node[top] = rid
        st_start[top] = mid
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lid
        st_start[top] = start
        st_end[top] = mid
        st_depth[top] = depth + 1
        top += 1

    return node_count


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right):
    """Leaf index reached by each row."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def warm_up() -> None:
    """Force kernel compilation (results are cached on disk by numba)."""
    X = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5], [0.2, 0.9]])
    y = np.array([0.0, 1.0, 0.0, 1.0])
    w = np.ones(4)
    cap = 9
    feat = np.empty(cap, np.int32)
    thr = np.empty(cap, np.float64)
    lft = np.empty(cap, np.int32)
    rgt = np.empty(cap, np.int32)
    imp = np.zeros(2)
    build_tree(X, y, w, 1, 2, 8, 1, 2, 0, 2, 7, feat, thr, lft, rgt, np.zeros((cap, 2)), imp)
    build_tree(X, y, w, 0, 1, 8, 1, 2, 1, 1, 7, feat, thr, lft, rgt, np.zeros((cap, 1)), imp)
    apply_tree(X, feat, thr, lft, rgt)
