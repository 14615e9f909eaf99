"""Numba kernels for tree growth, prediction and TreeSHAP.

Trees are grown depth first; node ids are assigned in preorder.  Rows are
addressed through *positions* ``p`` into a ``rows`` array, so bootstrap
duplicates are plain repeated row ids.  Every kernel partitions stably, so
results depend only on the inputs and the random state, never on timing.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0

ERR_NONE = 0
ERR_DEGENERATE = 1


@njit(cache=True, nogil=True)
def next_u01(state):
    s = state[0] + _GOLDEN
    state[0] = s
    z = s
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    z = z ^ (z >> np.uint64(31))
    return np.float64(z >> np.uint64(11)) * _INV_2_53


@njit(cache=True, nogil=True)
def soft_threshold(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


@njit(cache=True, nogil=True)
def leaf_weight_nb(G, H, alpha, lam):
    return -soft_threshold(G, alpha) / (H + lam)


@njit(cache=True, nogil=True)
def structure_score(G, H, alpha, lam):
    t = soft_threshold(G, alpha)
    return t * t / (H + lam)


TIE_RTOL = 1e-12


@njit(cache=True, nogil=True)
def _beats(score, best):
    # scores equal up to summation-order rounding count as ties; the first candidate
    # in (feature, threshold) scan order keeps the split, so row order never matters
    if best == -np.inf:
        return True
    return score > best + TIE_RTOL * abs(best)


@njit(cache=True, nogil=True)
def _midpoint(lo, hi):
    t = 0.5 * (lo + hi)
    if t >= hi:
        t = lo
    return t


@njit(cache=True, nogil=True)
def _stable_partition(arr, start, end, goes_left, tmp):
    k = start
    for i in range(start, end):
        if goes_left[arr[i]]:
            tmp[k] = arr[i]
            k += 1
    n_left = k - start
    for i in range(start, end):
        if not goes_left[arr[i]]:
            tmp[k] = arr[i]
            k += 1
    for i in range(start, end):
        arr[i] = tmp[i]
    return n_left


@njit(cache=True, nogil=True)
def cart_grow(X, y, rows, max_depth, min_split, min_leaf, random_mode, n_sub, state):
    """Variance-reduction regression tree.

    ``random_mode`` draws one threshold per candidate feature uniformly in the
    node's (min, max); otherwise every midpoint between consecutive distinct
    values is scanned.  ``max_depth < 0`` means unlimited depth.
    """
    m = rows.shape[0]
    d = X.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, np.int64)

    pos = np.arange(m)
    if random_mode:
        order = np.empty((1, 1), np.int64)
    else:
        order = np.empty((d, m), np.int64)
        vals = np.empty(m)
        for f in range(d):
            for p in range(m):
                vals[p] = X[rows[p], f]
            order[f, :] = np.argsort(vals, kind="mergesort")
    goes_left = np.zeros(m, np.bool_)
    tmp = np.empty(m, np.int64)
    feats = np.arange(d)

    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_is_left = np.empty(cap, np.bool_)
    sp = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    st_parent[0] = -1
    st_is_left[0] = False
    sp = 1
    n_nodes = 0

    while sp > 0:
        sp -= 1
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        parent = st_parent[sp]
        nid = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_is_left[sp]:
                left[parent] = nid
            else:
                right[parent] = nid

        cnt = end - start
        s = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(start, end):
            v = y[rows[pos[i]]]
            s += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        if ymin == ymax:
            value[nid] = y[rows[pos[start]]]
        else:
            value[nid] = s / cnt
        count[nid] = cnt
        if (max_depth >= 0 and depth >= max_depth) or cnt < min_split or ymin == ymax:
            continue

        for j in range(d):
            feats[j] = j
        n_sel = d
        if n_sub < d:
            n_sel = n_sub
            for j in range(n_sel):
                r = j + int(next_u01(state) * (d - j))
                if r >= d:
                    r = d - 1
                t = feats[j]
                feats[j] = feats[r]
                feats[r] = t
            # insertion sort keeps the lowest-feature-index tie rule
            for a in range(1, n_sel):
                key = feats[a]
                b = a - 1
                while b >= 0 and feats[b] > key:
                    feats[b + 1] = feats[b]
                    b -= 1
                feats[b + 1] = key

        best_score = -np.inf
        best_f = -1
        best_t = 0.0
        for jj in range(n_sel):
            f = feats[jj]
            if random_mode:
                lo = np.inf
                hi = -np.inf
                for i in range(start, end):
                    v = X[rows[pos[i]], f]
                    if v < lo:
                        lo = v
                    if v > hi:
                        hi = v
                if hi <= lo:
                    continue
                t = lo + next_u01(state) * (hi - lo)
                if t >= hi:
                    t = lo
                sl = 0.0
                nl = 0
                for i in range(start, end):
                    p = pos[i]
                    if X[rows[p], f] <= t:
                        sl += y[rows[p]]
                        nl += 1
                nr = cnt - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                sr = s - sl
                sc = sl * sl / nl + sr * sr / nr
                if _beats(sc, best_score):
                    best_score = sc
                    best_f = f
                    best_t = t
            else:
                sl = 0.0
                nl = 0
                for i in range(start, end - 1):
                    p = order[f, i]
                    v = X[rows[p], f]
                    sl += y[rows[p]]
                    nl += 1
                    vn = X[rows[order[f, i + 1]], f]
                    if vn <= v:
                        continue
                    nr = cnt - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    sr = s - sl
                    sc = sl * sl / nl + sr * sr / nr
                    if _beats(sc, best_score):
                        best_score = sc
                        best_f = f
                        best_t = _midpoint(v, vn)

        if best_f < 0:
            continue
        if not random_mode and best_score <= s * s / cnt:
            continue

        for i in range(start, end):
            p = pos[i]
            goes_left[p] = X[rows[p], best_f] <= best_t
        n_left = _stable_partition(pos, start, end, goes_left, tmp)
        if not random_mode:
            for f in range(d):
                _stable_partition(order[f], start, end, goes_left, tmp)
        feature[nid] = best_f
        threshold[nid] = best_t

        st_start[sp] = start + n_left
        st_end[sp] = end
        st_depth[sp] = depth + 1
        st_parent[sp] = nid
        st_is_left[sp] = False
        sp += 1
        st_start[sp] = start
        st_end[sp] = start + n_left
        st_depth[sp] = depth + 1
        st_parent[sp] = nid
        st_is_left[sp] = True
        sp += 1

    cover = count[:n_nodes].astype(np.float64)
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes], cover)


@njit(cache=True, nogil=True)
def gbt_grow_exact(X, g, h, rows, feats, max_depth, mcw, alpha, lam, gamma):
    """Second-order greedy tree over presorted features.

    ``g``/``h`` are aligned with ``rows`` (already weighted).  Splits are
    accepted only with strictly positive regularised gain.
    """
    m = rows.shape[0]
    nf = feats.shape[0]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, np.int64)
    cover = np.zeros(cap)

    pos = np.arange(m)
    order = np.empty((nf, m), np.int64)
    vals = np.empty(m)
    for k in range(nf):
        f = feats[k]
        for p in range(m):
            vals[p] = X[rows[p], f]
        order[k, :] = np.argsort(vals, kind="mergesort")
    goes_left = np.zeros(m, np.bool_)
    tmp = np.empty(m, np.int64)

    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_is_left = np.empty(cap, np.bool_)
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    st_parent[0] = -1
    st_is_left[0] = False
    sp = 1
    n_nodes = 0
    err = ERR_NONE

    while sp > 0:
        sp -= 1
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        parent = st_parent[sp]
        nid = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_is_left[sp]:
                left[parent] = nid
            else:
                right[parent] = nid

        cnt = end - start
        G = 0.0
        H = 0.0
        for i in range(start, end):
            G += g[pos[i]]
            H += h[pos[i]]
        if H + lam <= 0.0:
            err = ERR_DEGENERATE
            break
        value[nid] = leaf_weight_nb(G, H, alpha, lam)
        count[nid] = cnt
        cover[nid] = H
        if (max_depth >= 0 and depth >= max_depth) or cnt < 2:
            continue

        parent_score = structure_score(G, H, alpha, lam)
        best_gain = 0.0
        best_f = -1
        best_t = 0.0
        for k in range(nf):
            f = feats[k]
            GL = 0.0
            HL = 0.0
            for i in range(start, end - 1):
                p = order[k, i]
                GL += g[p]
                HL += h[p]
                v = X[rows[p], f]
                vn = X[rows[order[k, i + 1]], f]
                if vn <= v:
                    continue
                if HL < mcw:
                    continue
                HR = H - HL
                if HR < mcw:
                    continue
                if HL + lam <= 0.0 or HR + lam <= 0.0:
                    continue
                gain = 0.5 * (structure_score(GL, HL, alpha, lam)
                              + structure_score(G - GL, HR, alpha, lam)
                              - parent_score) - gamma
                if _beats(gain, best_gain):
                    best_gain = gain
                    best_f = f
                    best_t = _midpoint(v, vn)

        if best_f < 0:
            continue
        for i in range(start, end):
            p = pos[i]
            goes_left[p] = X[rows[p], best_f] <= best_t
        n_left = _stable_partition(pos, start, end, goes_left, tmp)
        for k in range(nf):
            _stable_partition(order[k], start, end, goes_left, tmp)
        feature[nid] = best_f
        threshold[nid] = best_t

        st_start[sp] = start + n_left
        st_end[sp] = end
        st_depth[sp] = depth + 1
        st_parent[sp] = nid
        st_is_left[sp] = False
        sp += 1
        st_start[sp] = start
        st_end[sp] = start + n_left
        st_depth[sp] = depth + 1
        st_parent[sp] = nid
        st_is_left[sp] = True
        sp += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes], cover[:n_nodes], err)


@njit(cache=True, nogil=True)
def _fill_hist(codes, bundle_start, rows, pos, g, h, start, end, hG, hH, hC):
    hG[:] = 0.0
    hH[:] = 0.0
    hC[:] = 0.0
    nb = codes.shape[1]
    for i in range(start, end):
        p = pos[i]
        r = rows[p]
        for b in range(nb):
            k = bundle_start[b] + codes[r, b]
            hG[k] += g[p]
            hH[k] += h[p]
            hC[k] += 1.0


@njit(cache=True, nogil=True)
def gbt_grow_hist(X, bins, codes, bundle_start, feat_bundle, feat_offset, feat_nbins,
                  feat_zero, feat_multi, bin_min, bin_max, g, h, rows, feats,
                  max_depth, mcw, alpha, lam, gamma):
    """Histogram variant of :func:`gbt_grow_exact`.

    Histograms are accumulated over bundled columns (``codes``) and unpacked
    per original feature; the larger child's histogram is the parent's minus
    the smaller child's.  A candidate split sits between two consecutive
    non-empty bins, at the midpoint of their global value range.
    """
    m = rows.shape[0]
    nf = feats.shape[0]
    total_bins = bundle_start[bundle_start.shape[0] - 1]
    max_nb = 0
    for f in range(feat_nbins.shape[0]):
        if feat_nbins[f] > max_nb:
            max_nb = feat_nbins[f]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, np.int64)
    cover = np.zeros(cap)

    depth_cap = max_depth if max_depth >= 0 else m
    slots = depth_cap + 3
    poolG = np.zeros((slots, total_bins))
    poolH = np.zeros((slots, total_bins))
    poolC = np.zeros((slots, total_bins))
    aG = np.zeros(total_bins)
    aH = np.zeros(total_bins)
    aC = np.zeros(total_bins)
    fG = np.zeros(max_nb)
    fH = np.zeros(max_nb)
    fC = np.zeros(max_nb)

    pos = np.arange(m)
    goes_left = np.zeros(m, np.bool_)
    tmp = np.empty(m, np.int64)

    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_is_left = np.empty(cap, np.bool_)
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    st_parent[0] = -1
    st_is_left[0] = False
    _fill_hist(codes, bundle_start, rows, pos, g, h, 0, m, poolG[0], poolH[0], poolC[0])
    sp = 1
    n_nodes = 0
    err = ERR_NONE

    while sp > 0:
        sp -= 1
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        parent = st_parent[sp]
        nid = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_is_left[sp]:
                left[parent] = nid
            else:
                right[parent] = nid
        hG = poolG[sp]
        hH = poolH[sp]
        hC = poolC[sp]

        cnt = end - start
        G = 0.0
        H = 0.0
        for i in range(start, end):
            G += g[pos[i]]
            H += h[pos[i]]
        if H + lam <= 0.0:
            err = ERR_DEGENERATE
            break
        value[nid] = leaf_weight_nb(G, H, alpha, lam)
        count[nid] = cnt
        cover[nid] = H
        if (max_depth >= 0 and depth >= max_depth) or cnt < 2:
            continue

        parent_score = structure_score(G, H, alpha, lam)
        best_gain = 0.0
        best_f = -1
        best_t = 0.0
        best_bin = -1
        for k in range(nf):
            f = feats[k]
            b = feat_bundle[f]
            base = bundle_start[b] + feat_offset[f]
            nbf = feat_nbins[f]
            for q in range(nbf):
                fG[q] = hG[base + q]
                fH[q] = hH[base + q]
                fC[q] = hC[base + q]
            if feat_multi[f]:
                tg = 0.0
                th = 0.0
                tc = 0.0
                sg = 0.0
                sh = 0.0
                sc = 0.0
                for q in range(bundle_start[b], bundle_start[b + 1]):
                    tg += hG[q]
                    th += hH[q]
                    tc += hC[q]
                for q in range(nbf):
                    sg += fG[q]
                    sh += fH[q]
                    sc += fC[q]
                z = feat_zero[f]
                fG[z] += tg - sg
                fH[z] += th - sh
                fC[z] += tc - sc
            GL = 0.0
            HL = 0.0
            prev = -1
            for q in range(nbf):
                if fC[q] <= 0.0:
                    continue
                if prev >= 0 and HL >= mcw:
                    HR = H - HL
                    if HR >= mcw and HL + lam > 0.0 and HR + lam > 0.0:
                        gain = 0.5 * (structure_score(GL, HL, alpha, lam)
                                      + structure_score(G - GL, HR, alpha, lam)
                                      - parent_score) - gamma
                        if _beats(gain, best_gain):
                            best_gain = gain
                            best_f = f
                            best_bin = prev
                            best_t = _midpoint(bin_max[f, prev], bin_min[f, q])
                GL += fG[q]
                HL += fH[q]
                prev = q

        if best_f < 0:
            continue
        for i in range(start, end):
            p = pos[i]
            goes_left[p] = bins[rows[p], best_f] <= best_bin
        n_left = _stable_partition(pos, start, end, goes_left, tmp)
        feature[nid] = best_f
        threshold[nid] = best_t
        n_right = cnt - n_left

        # smaller child built directly, larger one by subtraction
        if n_left <= n_right:
            _fill_hist(codes, bundle_start, rows, pos, g, h, start, start + n_left, aG, aH, aC)
            for q in range(total_bins):
                poolG[sp, q] = hG[q] - aG[q]
                poolH[sp, q] = hH[q] - aH[q]
                poolC[sp, q] = hC[q] - aC[q]
            poolG[sp + 1, :] = aG
            poolH[sp + 1, :] = aH
            poolC[sp + 1, :] = aC
        else:
            _fill_hist(codes, bundle_start, rows, pos, g, h, start + n_left, end, aG, aH, aC)
            for q in range(total_bins):
                poolG[sp + 1, q] = hG[q] - aG[q]
                poolH[sp + 1, q] = hH[q] - aH[q]
                poolC[sp + 1, q] = hC[q] - aC[q]
            poolG[sp, :] = aG
            poolH[sp, :] = aH
            poolC[sp, :] = aC

        st_start[sp] = start + n_left
        st_end[sp] = end
        st_depth[sp] = depth + 1
        st_parent[sp] = nid
        st_is_left[sp] = False
        sp += 1
        st_start[sp] = start
        st_end[sp] = start + n_left
        st_depth[sp] = depth + 1
        st_parent[sp] = nid
        st_is_left[sp] = True
        sp += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes], cover[:n_nodes], err)


@njit(cache=True, nogil=True)
def predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True, nogil=True)
def apply_tree(feature, threshold, left, right, X):
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


@njit(cache=True, nogil=True)
def tree_depth(left, right):
    n = left.shape[0]
    depth = np.zeros(n, np.int64)
    best = 0
    for i in range(n):  # preorder: parents precede children
        if left[i] >= 0:
            depth[left[i]] = depth[i] + 1
            depth[right[i]] = depth[i] + 1
            if depth[i] + 1 > best:
                best = depth[i] + 1
    return best


# ---------------------------------------------------------------------------
# path-dependent TreeSHAP (polynomial-time exact algorithm)


@njit(cache=True, nogil=True)
def _extend(pd, pz, po, pw, base, ud, zero_f, one_f, feat):
    pd[base + ud] = feat
    pz[base + ud] = zero_f
    po[base + ud] = one_f
    pw[base + ud] = 1.0 if ud == 0 else 0.0
    for i in range(ud - 1, -1, -1):
        pw[base + i + 1] += one_f * pw[base + i] * (i + 1) / (ud + 1)
        pw[base + i] = zero_f * pw[base + i] * (ud - i) / (ud + 1)


@njit(cache=True, nogil=True)
def _unwind(pd, pz, po, pw, base, ud, idx):
    one_f = po[base + idx]
    zero_f = pz[base + idx]
    nxt = pw[base + ud]
    for i in range(ud - 1, -1, -1):
        if one_f != 0.0:
            t = pw[base + i]
            pw[base + i] = nxt * (ud + 1) / ((i + 1) * one_f)
            nxt = t - pw[base + i] * zero_f * (ud - i) / (ud + 1)
        else:
            pw[base + i] = pw[base + i] * (ud + 1) / (zero_f * (ud - i))
    for i in range(idx, ud):
        pd[base + i] = pd[base + i + 1]
        pz[base + i] = pz[base + i + 1]
        po[base + i] = po[base + i + 1]


@njit(cache=True, nogil=True)
def _unwound_sum(pz, po, pw, base, ud, idx):
    one_f = po[base + idx]
    zero_f = pz[base + idx]
    nxt = pw[base + ud]
    total = 0.0
    if one_f != 0.0:
        for i in range(ud - 1, -1, -1):
            t = nxt / ((i + 1) * one_f)
            total += t
            nxt = pw[base + i] - t * zero_f * (ud - i)
    else:
        for i in range(ud - 1, -1, -1):
            total += pw[base + i] / (zero_f * (ud - i))
    return total * (ud + 1)


@njit(cache=True, nogil=True)
def tree_shap_path(feature, threshold, left, right, value, cover, x, max_depth, phi, scale):
    """Add ``scale`` times the path-dependent SHAP values of one tree to ``phi``."""
    size = (max_depth + 2) * (max_depth + 3) // 2 + max_depth + 4
    pd = np.zeros(size, np.int64)
    pz = np.zeros(size)
    po = np.zeros(size)
    pw = np.zeros(size)
    stack_cap = 2 * (max_depth + 2)
    s_node = np.empty(stack_cap, np.int64)
    s_ud = np.empty(stack_cap, np.int64)
    s_pbase = np.empty(stack_cap, np.int64)
    s_pz = np.empty(stack_cap)
    s_po = np.empty(stack_cap)
    s_pf = np.empty(stack_cap, np.int64)
    # the root's "parent segment" is a virtual empty path at offset 0
    s_node[0] = 0
    s_ud[0] = 0
    s_pbase[0] = 0
    s_pz[0] = 1.0
    s_po[0] = 1.0
    s_pf[0] = -1
    sp = 1
    while sp > 0:
        sp -= 1
        node = s_node[sp]
        ud = s_ud[sp]
        pbase = s_pbase[sp]
        base = pbase + ud + 1 if ud > 0 else 0
        if ud > 0:
            for i in range(ud):
                pd[base + i] = pd[pbase + i]
                pz[base + i] = pz[pbase + i]
                po[base + i] = po[pbase + i]
                pw[base + i] = pw[pbase + i]
        _extend(pd, pz, po, pw, base, ud, s_pz[sp], s_po[sp], s_pf[sp])
        f = feature[node]
        if f < 0:
            for i in range(1, ud + 1):
                w = _unwound_sum(pz, po, pw, base, ud, i)
                phi[pd[base + i]] += scale * w * (po[base + i] - pz[base + i]) * value[node]
            continue
        if x[f] <= threshold[node]:
            hot = left[node]
            cold = right[node]
        else:
            hot = right[node]
            cold = left[node]
        w_node = cover[node]
        hot_zero = cover[hot] / w_node
        cold_zero = cover[cold] / w_node
        inc_zero = 1.0
        inc_one = 1.0
        k = 0
        while k <= ud:
            if pd[base + k] == f:
                break
            k += 1
        cur_ud = ud
        if k != ud + 1:
            inc_zero = pz[base + k]
            inc_one = po[base + k]
            _unwind(pd, pz, po, pw, base, ud, k)
            cur_ud = ud - 1
        # cold pushed first so the hot branch is expanded first
        s_node[sp] = cold
        s_ud[sp] = cur_ud + 1
        s_pbase[sp] = base
        s_pz[sp] = cold_zero * inc_zero
        s_po[sp] = 0.0
        s_pf[sp] = f
        sp += 1
        s_node[sp] = hot
        s_ud[sp] = cur_ud + 1
        s_pbase[sp] = base
        s_pz[sp] = hot_zero * inc_zero
        s_po[sp] = inc_one
        s_pf[sp] = f
        sp += 1


@njit(cache=True, nogil=True)
def tree_shap_batch(feature, threshold, left, right, value, cover, starts, depths, scales, X, out):
    """Path-dependent SHAP of a concatenated ensemble for every row of ``X``.

    Tree ``t`` occupies nodes ``starts[t]:starts[t + 1]`` with tree-local child
    indices; its contribution is multiplied by ``scales[t]``.
    """
    for r in range(X.shape[0]):
        x = X[r]
        phi = out[r]
        for t in range(len(scales)):
            s = starts[t]
            e = starts[t + 1]
            tree_shap_path(feature[s:e], threshold[s:e], left[s:e], right[s:e], value[s:e],
                           cover[s:e], x, depths[t], phi, scales[t])


@njit(cache=True, nogil=True)
def _interventional_tree(feature, threshold, left, right, value, x, z, fact, state, phi, scale):
    """Add ``scale`` times the Shapley values of ``f(x) - f(z)`` for one tree and one reference ``z``."""
    cap = 4 * (len(feature) + 2)
    s_node = np.empty(cap, np.int64)
    s_feat = np.empty(cap, np.int64)
    s_val = np.empty(cap, np.int64)
    s_node[0] = 0
    s_feat[0] = -1
    s_val[0] = 0
    sp = 1
    na = 0
    nb = 0
    d = len(state)
    while sp > 0:
        sp -= 1
        node = s_node[sp]
        f = s_feat[sp]
        if node == -2:
            if state[f] == 1:
                na -= 1
            else:
                nb -= 1
            state[f] = 0
            continue
        if f >= 0:
            state[f] = s_val[sp]
            if s_val[sp] == 1:
                na += 1
            else:
                nb += 1
        g = feature[node]
        if g < 0:
            v = value[node] * scale
            if na > 0:
                wa = v * fact[na - 1] * fact[nb] / fact[na + nb]
            else:
                wa = 0.0
            if nb > 0:
                wb = -v * fact[na] * fact[nb - 1] / fact[na + nb]
            else:
                wb = 0.0
            if na + nb > 0:
                for j in range(d):
                    if state[j] == 1:
                        phi[j] += wa
                    elif state[j] == 2:
                        phi[j] += wb
            continue
        xl = x[g] <= threshold[node]
        zl = z[g] <= threshold[node]
        cx = left[node] if xl else right[node]
        cz = left[node] if zl else right[node]
        if cx == cz:
            s_node[sp] = cx
            s_feat[sp] = -1
            s_val[sp] = 0
            sp += 1
        elif state[g] == 1:
            s_node[sp] = cx
            s_feat[sp] = -1
            s_val[sp] = 0
            sp += 1
        elif state[g] == 2:
            s_node[sp] = cz
            s_feat[sp] = -1
            s_val[sp] = 0
            sp += 1
        else:
            s_node[sp] = -2
            s_feat[sp] = g
            s_val[sp] = 0
            sp += 1
            s_node[sp] = cx
            s_feat[sp] = g
            s_val[sp] = 1
            sp += 1
            s_node[sp] = -2
            s_feat[sp] = g
            s_val[sp] = 0
            sp += 1
            s_node[sp] = cz
            s_feat[sp] = g
            s_val[sp] = 2
            sp += 1


@njit(cache=True, nogil=True)
def tree_shap_interventional_batch(feature, threshold, left, right, value, starts, scales, X, B, out):
    """Interventional SHAP averaged over background rows ``B`` for every row of ``X``."""
    d = X.shape[1]
    fact = np.ones(d + 2)
    for i in range(1, d + 2):
        fact[i] = fact[i - 1] * i
    state = np.zeros(d, np.int64)
    inv = 1.0 / B.shape[0]
    for r in range(X.shape[0]):
        x = X[r]
        phi = out[r]
        for t in range(len(scales)):
            s = starts[t]
            e = starts[t + 1]
            for b in range(B.shape[0]):
                _interventional_tree(feature[s:e], threshold[s:e], left[s:e], right[s:e], value[s:e],
                                     x, B[b], fact, state, phi, scales[t] * inv)
