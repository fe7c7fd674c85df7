"""Hot inner loops, each with a numba kernel and a numpy/scipy twin.

The dispatchers at the bottom pick the implementation from
:func:`tpsdet._accel.use_numba`; both paths must agree exactly (integer
outputs) or to float rounding (depthwise convolution).
"""
from __future__ import annotations

import numpy as np

from ._accel import njit, use_numba

# ------------------------------------------------------ depthwise conv1d
# Buffers are channel-major: x (C, B, L), w (C, k), out (C, B, L_out).


@njit
def _dw_forward_nb(x, w, pad, l_out, out):
    # taps outermost, then a contiguous run over the valid outputs: the inner
    # loop vectorises and every output sums its taps in the numpy twin's order
    C, B, L = x.shape
    k = w.shape[1]
    for c in range(C):
        for b in range(B):
            for j in range(k):
                wj = w[c, j]
                lo = max(0, pad - j)
                hi = min(l_out, L + pad - j)
                for l in range(lo, hi):
                    out[c, b, l] += wj * x[c, b, l + j - pad]


@njit
def _dw_input_grad_nb(w, g, pad, dx):
    C, B, L = dx.shape
    k = w.shape[1]
    l_out = g.shape[2]
    for c in range(C):
        for b in range(B):
            for j in range(k):
                wj = w[c, j]
                off = j - pad
                for l in range(max(0, -off), min(l_out, L - off)):
                    dx[c, b, l + off] += wj * g[c, b, l]


def _dw_forward_np(x, w, pad, l_out, out):
    C, B, L = x.shape
    k = w.shape[1]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, max(0, l_out + k - 1 - L - pad))))
    for j in range(k):
        out += w[:, j, None, None] * xp[:, :, j : j + l_out]


def _dw_input_grad_np(w, g, pad, dx):
    L = dx.shape[2]
    k = w.shape[1]
    l_out = g.shape[2]
    right = max(0, l_out + k - 1 - L - pad)
    dxp = np.zeros((dx.shape[0], dx.shape[1], L + pad + right), dtype=dx.dtype)
    for j in range(k):
        dxp[:, :, j : j + l_out] += w[:, j, None, None] * g
    dx += dxp[:, :, pad : pad + L]


def _dw_weight_grad(x, g, pad, k, dw):
    # a batched dot product per tap; einsum's BLAS-backed reduction beats a
    # scalar loop, which numba cannot vectorise without reassociating
    L = x.shape[2]
    l_out = g.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, max(0, l_out + k - 1 - L - pad))))
    for j in range(k):
        dw[:, j] += np.einsum("cbl,cbl->c", g, xp[:, :, j : j + l_out])


def depthwise_forward(x, w, pad, l_out):
    out = np.zeros((x.shape[0], x.shape[1], l_out), dtype=np.result_type(x, w))
    if use_numba():
        _dw_forward_nb(x, w.astype(out.dtype, copy=False), pad, l_out, out)
    else:
        _dw_forward_np(x, w, pad, l_out, out)
    return out


def depthwise_backward(x, w, g, pad):
    dx = np.zeros(x.shape, dtype=g.dtype)
    dw = np.zeros(w.shape, dtype=g.dtype)
    if use_numba():
        _dw_input_grad_nb(w.astype(g.dtype, copy=False), g, pad, dx)
    else:
        _dw_input_grad_np(w, g, pad, dx)
    _dw_weight_grad(x, g, pad, w.shape[1], dw)
    return dx, dw


# --------------------------------------------------- temporal local maxima
# cube (H, W, K); a point is the first index of a plateau that is strictly
# higher than both neighbouring values (sequence ends count as lower), unless
# the plateau spans the whole series.


@njit
def _local_max_nb(cube, tau):
    H, W, K = cube.shape
    n = 0
    ys = np.empty(H * W * ((K + 1) // 2), dtype=np.int64)
    xs = np.empty_like(ys)
    ts = np.empty_like(ys)
    for y in range(H):
        for x in range(W):
            t = 0
            while t < K:
                v = cube[y, x, t]
                e = t
                while e + 1 < K and cube[y, x, e + 1] == v:
                    e += 1
                left_ok = t == 0 or cube[y, x, t - 1] < v
                right_ok = e == K - 1 or cube[y, x, e + 1] < v
                whole = t == 0 and e == K - 1
                if left_ok and right_ok and not whole and v >= tau:
                    ys[n] = y
                    xs[n] = x
                    ts[n] = t
                    n += 1
                t = e + 1
    return xs[:n], ys[:n], ts[:n]


def _local_max_np(cube, tau):
    H, W, K = cube.shape
    v = cube.reshape(H * W, K)
    neg = np.full((H * W, 1), -np.inf, dtype=np.float64)
    vv = v.astype(np.float64)
    # next value to the right that differs from the current one
    right = np.empty_like(vv)
    right[:, K - 1] = -np.inf
    for t in range(K - 2, -1, -1):
        nxt = vv[:, t + 1]
        right[:, t] = np.where(nxt != vv[:, t], nxt, right[:, t + 1])
    left = np.concatenate([neg, vv[:, :-1]], axis=1)
    run_start = left != vv
    is_max = run_start & (left < vv) & (right < vv) & (vv >= tau)
    # whole-series plateau: starts at 0, no differing value to the right
    whole = np.zeros_like(is_max)
    whole[:, 0] = np.isneginf(right[:, 0])
    is_max &= ~whole
    pix, ts = np.nonzero(is_max)
    return (pix % W).astype(np.int64), (pix // W).astype(np.int64), ts.astype(np.int64)


def local_maxima(cube, tau):
    """Return ``(x, y, t)`` index arrays of temporal peaks ``>= tau`` (unsorted)."""
    cube = np.ascontiguousarray(cube, dtype=np.float32)
    if use_numba():
        return _local_max_nb(cube, np.float32(tau))
    return _local_max_np(cube, np.float32(tau))


# ----------------------------------------------------- radius graph edges
# Points sorted by (t, x); frame_start[f] indexes the first point of frame
# ``tmin + f``.  Candidates in later frames are found by binary search on x.


@njit
def _radius_edges_nb(xs, ys, ts, frame_start, tmin, d, dt):
    n = xs.shape[0]
    d2 = d * d
    nf = frame_start.shape[0] - 1
    cap = 1024
    ei = np.empty(cap, dtype=np.int64)
    ej = np.empty(cap, dtype=np.int64)
    m = 0
    for i in range(n):
        fi = ts[i] - tmin
        for step in range(1, dt + 1):
            f = fi + step
            if f >= nf:
                break
            lo = frame_start[f]
            hi = frame_start[f + 1]
            # first index with x >= xs[i] - d
            a, b = lo, hi
            target = xs[i] - d
            while a < b:
                mid = (a + b) // 2
                if xs[mid] < target:
                    a = mid + 1
                else:
                    b = mid
            j = a
            while j < hi and xs[j] <= xs[i] + d:
                dx = xs[j] - xs[i]
                dy = ys[j] - ys[i]
                if dx * dx + dy * dy <= d2:
                    if m == cap:
                        cap *= 2
                        ni = np.empty(cap, dtype=np.int64)
                        nj = np.empty(cap, dtype=np.int64)
                        ni[:m] = ei[:m]
                        nj[:m] = ej[:m]
                        ei = ni
                        ej = nj
                    ei[m] = i
                    ej[m] = j
                    m += 1
                j += 1
    return ei[:m], ej[:m]


def _radius_edges_np(xs, ys, ts, frame_start, tmin, d, dt):
    from scipy.spatial import cKDTree

    nf = frame_start.shape[0] - 1
    trees = {}
    out_i, out_j = [], []
    for f in range(nf):
        lo, hi = frame_start[f], frame_start[f + 1]
        if lo == hi:
            continue
        pts = np.column_stack([xs[lo:hi], ys[lo:hi]])
        if f not in trees:
            trees[f] = cKDTree(pts)
        for step in range(1, dt + 1):
            g = f + step
            if g >= nf:
                break
            lo2, hi2 = frame_start[g], frame_start[g + 1]
            if lo2 == hi2:
                continue
            if g not in trees:
                trees[g] = cKDTree(np.column_stack([xs[lo2:hi2], ys[lo2:hi2]]))
            pairs = trees[f].query_ball_tree(trees[g], r=d * (1 + 1e-12))
            for a, nbrs in enumerate(pairs):
                for b in nbrs:
                    i, j = lo + a, lo2 + b
                    dx, dy = xs[j] - xs[i], ys[j] - ys[i]
                    if dx * dx + dy * dy <= d * d:
                        out_i.append(i)
                        out_j.append(j)
    return np.asarray(out_i, dtype=np.int64), np.asarray(out_j, dtype=np.int64)


def radius_edges(xs, ys, ts, frame_start, tmin, d, dt):
    """Edges between points in frames ``0 < t_j - t_i <= dt`` with spatial distance ``<= d``."""
    args = (
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(ys, dtype=np.float64),
        np.ascontiguousarray(ts, dtype=np.int64),
        np.ascontiguousarray(frame_start, dtype=np.int64),
        int(tmin),
        float(d),
        int(dt),
    )
    if use_numba():
        return _radius_edges_nb(*args)
    return _radius_edges_np(*args)


# --------------------------------------------------- connected components


@njit
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit
def _components_nb(n, ei, ej):
    parent = np.arange(n)
    for k in range(ei.shape[0]):
        a = _find(parent, ei[k])
        b = _find(parent, ej[k])
        if a != b:
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        labels[i] = _find(parent, i)
    return labels


def _components_np(n, ei, ej):
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    graph = coo_matrix((np.ones(ei.shape[0], dtype=np.int8), (ei, ej)), shape=(n, n))
    _, lab = connected_components(graph, directed=False)
    # relabel each component by its smallest member to match the union-find roots
    first = np.full(lab.max() + 1 if n else 0, n, dtype=np.int64)
    np.minimum.at(first, lab, np.arange(n))
    return first[lab]


def connected_components(n, ei, ej):
    """Component label of every node; a label is the smallest node index in the component."""
    ei = np.ascontiguousarray(ei, dtype=np.int64)
    ej = np.ascontiguousarray(ej, dtype=np.int64)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if use_numba():
        return _components_nb(int(n), ei, ej)
    return _components_np(int(n), ei, ej)
