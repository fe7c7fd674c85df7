"""Slow, obviously-correct reference implementations used by the tests."""
import numpy as np

from tpsdet import diffcore as dc


def conv1d_naive(x, w, b, stride, pad):
    B, C, L = x.shape
    c_out, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    l_out = (L + 2 * pad - k) // stride + 1
    out = np.zeros((B, c_out, l_out))
    for n in range(B):
        for o in range(c_out):
            for t in range(l_out):
                out[n, o, t] = np.sum(w[o] * xp[n, :, t * stride : t * stride + k])
            if b is not None:
                out[n, o] += b[o]
    return out


def conv_transpose1d_naive(x, w, b, stride, pad):
    B, C, L = x.shape
    _, c_out, k = w.shape
    l_full = (L - 1) * stride + k
    full = np.zeros((B, c_out, l_full))
    for n in range(B):
        for c in range(C):
            for t in range(L):
                full[n, :, t * stride : t * stride + k] += x[n, c, t] * w[c]
    out = full[:, :, pad : l_full - pad]
    if b is not None:
        out = out + b[:, None]
    return out


def depthwise_naive(x, w, b, pad):
    B, C, L = x.shape
    k = w.shape[1]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    l_out = L + 2 * pad - k + 1
    out = np.zeros((B, C, l_out))
    for t in range(l_out):
        out[:, :, t] = np.sum(xp[:, :, t : t + k] * w[None], axis=2)
    if b is not None:
        out += b[:, None]
    return out


def brute_edges(xs, ys, ts, d, dt):
    """All pairs ``i < j`` meeting the edge rule, by a full pairwise comparison."""
    xs, ys, ts = (np.asarray(a, dtype=np.float64) for a in (xs, ys, ts))
    gap = np.abs(ts[:, None] - ts[None, :])
    dist2 = (xs[:, None] - xs[None, :]) ** 2 + (ys[:, None] - ys[None, :]) ** 2
    ok = (gap > 0) & (gap <= dt) & (dist2 <= d * d)
    i, j = np.nonzero(np.triu(ok, k=1))
    return set(zip(i.tolist(), j.tolist()))


def brute_components(n, edges):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(i)
    return {frozenset(g) for g in groups.values()}


def local_max_scan(cube, tau):
    """Exhaustive per-pixel scan of the plateau peak rule."""
    H, W, K = cube.shape
    out = set()
    for y in range(H):
        for x in range(W):
            s = cube[y, x]
            t = 0
            while t < K:
                e = t
                while e + 1 < K and s[e + 1] == s[t]:
                    e += 1
                left = t == 0 or s[t - 1] < s[t]
                right = e == K - 1 or s[e + 1] < s[t]
                if left and right and not (t == 0 and e == K - 1) and s[t] >= tau:
                    out.add((x, y, t))
                t = e + 1
    return out


def greedy_pd_fa(values, t_list, x_list, y_list, tau, radius, n_background):
    """Per-threshold evaluation written directly from the matching rule."""
    H, W, K = values.shape
    n_d = 0
    n_f = 0
    for t in range(K):
        gts = [i for i, tt in enumerate(t_list) if tt == t]
        above = [(values[y, x, t], y, x) for y in range(H) for x in range(W) if values[y, x, t] >= tau]
        above.sort(key=lambda r: (-r[0], r[1], r[2]))
        free = set(gts)
        for v, y, x in above:
            near = [g for g in gts if max(abs(x - x_list[g]), abs(y - y_list[g])) <= radius]
            if not near:
                n_f += 1
                continue
            cands = [g for g in near if g in free]
            if cands:
                g = min(cands, key=lambda g: (max(abs(x - x_list[g]), abs(y - y_list[g])),
                                              (x - x_list[g]) ** 2 + (y - y_list[g]) ** 2, g))
                free.discard(g)
                n_d += 1
    n_t = len(t_list)
    return (n_d / n_t if n_t else 0.0), n_f / n_background


def rectangle_auc(x, y):
    """Left-endpoint rectangle sum of ``y`` over ascending ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.sum(np.diff(x) * y[:-1]))


def adjoint_gap(rng):
    """Random geometry; returns |<conv(a), b> - <a, convT(b)>| relative to the scale."""
    B = int(rng.integers(1, 4))
    c_in = int(rng.integers(1, 5))
    c_out = int(rng.integers(1, 5))
    k = int(rng.integers(1, 6))
    stride = int(rng.integers(1, 4))
    pad = int(rng.integers(0, k))
    # choose L so that the transpose reproduces exactly L: (l_out-1)*s - 2p + k == L
    l_out = int(rng.integers(1, 12))
    L = (l_out - 1) * stride - 2 * pad + k
    if L < 1 or (L + 2 * pad - k) // stride + 1 != l_out:
        return adjoint_gap(rng)
    w = rng.standard_normal((c_out, c_in, k))
    a = rng.standard_normal((B, c_in, L))
    bvec = rng.standard_normal((B, c_out, l_out))
    ca, _ = dc.conv1d_forward(a, w, None, stride, pad)
    tb, _ = dc.conv_transpose1d_forward(bvec, w, None, stride, pad)
    lhs = float(np.sum(ca * bvec))
    rhs = float(np.sum(a * tb))
    return abs(lhs - rhs) / max(1.0, abs(lhs))
