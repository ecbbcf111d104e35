"""Hot loops: hop selection, Louvain local moving, nearest-centroid assignment.

Every kernel exists twice. ``*_nb`` is written in the numba subset and jitted
when numba is available; ``*_np`` is a pure-numpy path. The public names at
the bottom dispatch on :data:`comtransfer._accel.USE_NUMBA`. Both variants
must return identical results (labels, hops) on the same input; the parity
tests enforce that.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# conductance-minimizing hop selection (per-node BFS)
# ---------------------------------------------------------------------------


@njit
def _cond(cut, vol, total):
    den = min(vol, total - vol)
    if den <= 0:
        return 1.0
    return cut / den


@njit
def _select_hops_nb(indptr, indices, h_max):
    n = indptr.shape[0] - 1
    deg = np.empty(n, np.int64)
    total = 0
    for v in range(n):
        deg[v] = indptr[v + 1] - indptr[v]
        total += deg[v]
    hops = np.zeros(n, np.int64)
    conds = np.empty(n, np.float64)
    stamp = np.full(n, -1, np.int64)
    depth = np.zeros(n, np.int64)
    frontier = np.empty(max(n, 1), np.int64)
    layer = np.empty(max(n, 1), np.int64)
    for v in range(n):
        stamp[v] = v
        depth[v] = 0
        vol = deg[v]
        internal = 0
        best = _cond(vol, vol, total)
        best_hop = 0
        frontier[0] = v
        fsize = 1
        for i in range(1, h_max + 1):
            lsize = 0
            for a in range(fsize):
                u = frontier[a]
                for p in range(indptr[u], indptr[u + 1]):
                    w = indices[p]
                    if stamp[w] != v:
                        stamp[w] = v
                        depth[w] = i
                        layer[lsize] = w
                        lsize += 1
            if lsize == 0:
                # component exhausted: later hops repeat the same set
                break
            old_links = 0
            new_links = 0
            for a in range(lsize):
                w = layer[a]
                vol += deg[w]
                for p in range(indptr[w], indptr[w + 1]):
                    x = indices[p]
                    if stamp[x] == v:
                        if depth[x] < i:
                            old_links += 1
                        else:
                            new_links += 1
            internal += old_links + new_links // 2
            c = _cond(vol - 2 * internal, vol, total)
            if c < best:
                best = c
                best_hop = i
            for a in range(lsize):
                frontier[a] = layer[a]
            fsize = lsize
        hops[v] = best_hop
        conds[v] = best
    return hops, conds


def _gather_rows(indptr, indices, rows):
    """Concatenated CSR rows ``indices[indptr[r]:indptr[r+1]]`` for all ``rows``."""
    starts = indptr[rows]
    lens = indptr[rows + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return indices[:0]
    offsets = np.repeat(starts - (np.cumsum(lens) - lens), lens) + np.arange(total)
    return indices[offsets]


def _select_hops_np(indptr, indices, h_max):
    n = indptr.shape[0] - 1
    deg = np.diff(indptr).astype(np.int64)
    total = int(deg.sum())
    hops = np.zeros(n, np.int64)
    conds = np.empty(n, np.float64)
    depth = np.full(n, -1, np.int64)
    for v in range(n):
        depth[v] = 0
        touched = [np.array([v])]
        vol = int(deg[v])
        internal = 0
        best = _cond_py(vol, vol, total)
        best_hop = 0
        frontier = touched[0]
        for i in range(1, h_max + 1):
            nbrs = _gather_rows(indptr, indices, frontier)
            layer = np.unique(nbrs[depth[nbrs] < 0])
            if layer.size == 0:
                break
            depth[layer] = i
            touched.append(layer)
            vol += int(deg[layer].sum())
            d = depth[_gather_rows(indptr, indices, layer)]
            old_links = int(np.count_nonzero((d >= 0) & (d < i)))
            new_links = int(np.count_nonzero(d == i))
            internal += old_links + new_links // 2
            c = _cond_py(vol - 2 * internal, vol, total)
            if c < best:
                best = c
                best_hop = i
            frontier = layer
        depth[np.concatenate(touched)] = -1
        hops[v] = best_hop
        conds[v] = best
    return hops, conds


def _cond_py(cut, vol, total):
    den = min(vol, total - vol)
    if den <= 0:
        return 1.0
    return cut / den


# ---------------------------------------------------------------------------
# Louvain local moving phase on a weighted symmetric CSR graph
# ---------------------------------------------------------------------------


@njit
def _louvain_move_nb(indptr, indices, weights, labels, min_gain, max_passes):
    n = indptr.shape[0] - 1
    labels = labels.copy()
    k = np.zeros(n, np.float64)
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += weights[p]
        k[i] = s
    m2 = 0.0
    for i in range(n):
        m2 += k[i]
    tot = np.zeros(n, np.float64)
    for i in range(n):
        tot[labels[i]] += k[i]

    neigh_w = np.zeros(n, np.float64)
    mark = np.full(n, -1, np.int64)
    cand = np.empty(max(n, 1), np.int64)

    cap = 16
    mv_node = np.empty(cap, np.int64)
    mv_from = np.empty(cap, np.int64)
    mv_to = np.empty(cap, np.int64)
    mv_gain = np.empty(cap, np.float64)
    n_moves = 0

    if m2 <= 0.0:
        return labels, mv_node[:0], mv_from[:0], mv_to[:0], mv_gain[:0]

    step = 0
    for _ in range(max_passes):
        moved = False
        for i in range(n):
            step += 1
            ci = labels[i]
            nc = 0
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j == i:
                    continue
                c = labels[j]
                if mark[c] != step:
                    mark[c] = step
                    neigh_w[c] = 0.0
                    cand[nc] = c
                    nc += 1
                neigh_w[c] += weights[p]
            tot[ci] -= k[i]
            own = neigh_w[ci] if mark[ci] == step else 0.0
            base = own - k[i] * tot[ci] / m2
            best_c = ci
            best_g = 0.0
            for t in range(nc):
                c = cand[t]
                if c == ci:
                    continue
                g = neigh_w[c] - k[i] * tot[c] / m2 - base
                if g > best_g or (g == best_g and g > 0.0 and c < best_c):
                    best_g = g
                    best_c = c
            dq = 2.0 * best_g / m2
            if best_c != ci and dq > min_gain:
                labels[i] = best_c
                if n_moves == cap:
                    cap *= 2
                    a = np.empty(cap, np.int64)
                    a[:n_moves] = mv_node
                    mv_node = a
                    a = np.empty(cap, np.int64)
                    a[:n_moves] = mv_from
                    mv_from = a
                    a = np.empty(cap, np.int64)
                    a[:n_moves] = mv_to
                    mv_to = a
                    b = np.empty(cap, np.float64)
                    b[:n_moves] = mv_gain
                    mv_gain = b
                mv_node[n_moves] = i
                mv_from[n_moves] = ci
                mv_to[n_moves] = best_c
                mv_gain[n_moves] = dq
                n_moves += 1
                moved = True
            tot[labels[i]] += k[i]
        if not moved:
            break
    return (
        labels,
        mv_node[:n_moves],
        mv_from[:n_moves],
        mv_to[:n_moves],
        mv_gain[:n_moves],
    )


def _louvain_move_np(indptr, indices, weights, labels, min_gain, max_passes):
    n = indptr.shape[0] - 1
    labels = labels.copy()
    rows = np.repeat(np.arange(n), np.diff(indptr))
    k = np.bincount(rows, weights=weights, minlength=n).astype(np.float64)
    m2 = float(k.sum())
    tot = np.bincount(labels, weights=k, minlength=n).astype(np.float64)
    moves = []
    if m2 <= 0.0:
        return _pack_moves(labels, moves)

    for _ in range(max_passes):
        moved = False
        for i in range(n):
            lo, hi = indptr[i], indptr[i + 1]
            nb = indices[lo:hi]
            keep = nb != i
            comms = labels[nb[keep]]
            ci = labels[i]
            tot[ci] -= k[i]
            if comms.size:
                uniq, inv = np.unique(comms, return_inverse=True)
                w_to = np.bincount(inv, weights=weights[lo:hi][keep])
            else:
                uniq = comms
                w_to = np.zeros(0)
            pos = np.searchsorted(uniq, ci)
            own = w_to[pos] if pos < uniq.size and uniq[pos] == ci else 0.0
            base = own - k[i] * tot[ci] / m2
            other = uniq != ci
            best_c = ci
            best_g = 0.0
            if other.any():
                cands = uniq[other]
                gains = w_to[other] - k[i] * tot[cands] / m2 - base
                j = int(np.argmax(gains))
                if gains[j] > 0.0:
                    best_c = int(cands[j])
                    best_g = float(gains[j])
            dq = 2.0 * best_g / m2
            if best_c != ci and dq > min_gain:
                labels[i] = best_c
                moves.append((i, ci, best_c, dq))
                moved = True
            tot[labels[i]] += k[i]
        if not moved:
            break
    return _pack_moves(labels, moves)


def _pack_moves(labels, moves):
    if not moves:
        z = np.zeros(0, np.int64)
        return labels, z, z.copy(), z.copy(), np.zeros(0)
    node, src, dst, gain = zip(*moves)
    return (
        labels,
        np.asarray(node, np.int64),
        np.asarray(src, np.int64),
        np.asarray(dst, np.int64),
        np.asarray(gain, np.float64),
    )


# ---------------------------------------------------------------------------
# nearest-centroid assignment
# ---------------------------------------------------------------------------


@njit
def _assign_nb(x, centroids):
    n, d = x.shape
    k = centroids.shape[0]
    labels = np.empty(n, np.int64)
    dist = np.empty(n, np.float64)
    for i in range(n):
        best = np.inf
        bj = 0
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - centroids[j, t]
                s += diff * diff
            if s < best:
                best = s
                bj = j
        labels[i] = bj
        dist[i] = best
    return labels, dist


def _assign_np(x, centroids, chunk=2048):
    n = x.shape[0]
    labels = np.empty(n, np.int64)
    dist = np.empty(n, np.float64)
    for a in range(0, n, chunk):
        diff = x[a : a + chunk, None, :] - centroids[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        labels[a : a + chunk] = np.argmin(sq, axis=1)
        dist[a : a + chunk] = sq[np.arange(sq.shape[0]), labels[a : a + chunk]]
    return labels, dist


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def select_hops(indptr, indices, h_max):
    """Per-node conductance-minimizing hop depth; returns ``(hops, conductances)``."""
    indptr = np.ascontiguousarray(indptr, np.int64)
    indices = np.ascontiguousarray(indices, np.int64)
    fn = _select_hops_nb if USE_NUMBA else _select_hops_np
    return fn(indptr, indices, int(h_max))


def louvain_move(indptr, indices, weights, labels, min_gain=1e-12, max_passes=1000):
    """One Louvain local-moving phase.

    Returns ``(labels, move_node, move_from, move_to, move_gain)``; the move
    arrays list every accepted move in order with its modularity gain.
    """
    args = (
        np.ascontiguousarray(indptr, np.int64),
        np.ascontiguousarray(indices, np.int64),
        np.ascontiguousarray(weights, np.float64),
        np.ascontiguousarray(labels, np.int64),
        float(min_gain),
        int(max_passes),
    )
    fn = _louvain_move_nb if USE_NUMBA else _louvain_move_np
    return fn(*args)


def assign_nearest(x, centroids):
    """Index of and squared distance to the nearest centroid for each row."""
    x = np.ascontiguousarray(x, np.float64)
    centroids = np.ascontiguousarray(centroids, np.float64)
    fn = _assign_nb if USE_NUMBA else _assign_np
    return fn(x, centroids)
