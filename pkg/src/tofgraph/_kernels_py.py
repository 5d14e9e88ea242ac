"""Pure numpy versions of the hot loops.

Shared conventions with the compiled module:
  * a grid graph is stored as ``w4`` of shape (4, H, W): ``w4[k, y, x]`` is the
    weight of the edge from (y, x) to (y + dy_k, x + dx_k) for the offsets in
    ``EDGE_OFFSETS``; entries whose far end is off-grid are zero;
  * an inter-frame graph is stored as ``a`` of shape (q*q, H, W): ``a[j, y, x]``
    weights the previous-frame pixel (y + oy_j, x + ox_j), offsets enumerated
    row-major from (-h, -h) to (h, h) with h = q // 2.
"""
import numpy as np

EDGE_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
# 8 neighbors as (edge index, sign): +1 forward along the stored edge, -1 backward
NEIGHBORS = tuple((k, s) for k in range(4) for s in (1, -1))


def window_offsets(q):
    h = q // 2
    return [(oy, ox) for oy in range(-h, h + 1) for ox in range(-h, h + 1)]


def shifted(a, dy, dx, fill=0.0):
    """b[..., y, x] = a[..., y + dy, x + dx], ``fill`` where that is off-grid."""
    h, w = a.shape[-2:]
    out = np.full_like(a, fill)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    ys, yd = (slice(dy, h), slice(0, h - dy)) if dy >= 0 else (slice(0, h + dy), slice(-dy, h))
    xs, xd = (slice(dx, w), slice(0, w - dx)) if dx >= 0 else (slice(0, w + dx), slice(-dx, w))
    out[..., yd, xd] = a[..., ys, xs]
    return out


def neighbor_weights(w4):
    """(8, H, W) weights to each of the 8 neighbors, ordered as ``NEIGHBORS``."""
    out = np.empty((8,) + w4.shape[1:])
    for j, (k, s) in enumerate(NEIGHBORS):
        dy, dx = EDGE_OFFSETS[k]
        out[j] = w4[k] if s > 0 else shifted(w4[k], -dy, -dx)
    return out


def degree(w4):
    d = w4.sum(axis=0)
    for k, (dy, dx) in enumerate(EDGE_OFFSETS):
        d = d + shifted(w4[k], -dy, -dx)
    return d


def adjacency_apply(w4, x):
    """W @ x on the grid."""
    out = np.zeros_like(x)
    for k, (dy, dx) in enumerate(EDGE_OFFSETS):
        out += w4[k] * shifted(x, dy, dx)
        out += shifted(w4[k] * x, -dy, -dx)
    return out


def unrolled_iterations(b, lam, w4, deg, n_iter):
    """n_iter sweeps of x <- (b + lam * W x) / (1 + lam * D), starting at x = b."""
    denom = 1.0 + lam * deg
    x = b.copy()
    for _ in range(n_iter):
        x = (b + lam * adjacency_apply(w4, x)) / denom
    return x


def attention_scores(qf, kf, q):
    """Scores (q*q, H, W) of (Q F_t(m)) . (K F_prev(m + o)); -inf off-grid."""
    h, w = qf.shape[:2]
    kf_c = np.moveaxis(kf, -1, 0)
    out = np.empty((q * q, h, w))
    for j, (oy, ox) in enumerate(window_offsets(q)):
        kn = shifted(kf_c, oy, ox)
        s = np.einsum("yxc,cyx->yx", qf, kn)
        out[j] = np.where(shifted(np.ones((h, w)), oy, ox) > 0, s, -np.inf)
    return out


def min_feature_distance(ft, fp, q):
    """min over the in-grid q x q window of ||F_t(m) - F_prev(m + o)||^2."""
    h, w = ft.shape[:2]
    fp_c = np.moveaxis(fp, -1, 0)
    ft_c = np.moveaxis(ft, -1, 0)
    best = np.full((h, w), np.inf)
    for oy, ox in window_offsets(q):
        diff = ft_c - shifted(fp_c, oy, ox)
        d2 = np.einsum("cyx,cyx->yx", diff, diff)
        d2 = np.where(shifted(np.ones((h, w)), oy, ox) > 0, d2, np.inf)
        best = np.minimum(best, d2)
    return best


def map_graph(a, w4_prev, q):
    """Mapped weights A (W_prev + I) A^T evaluated on the 8-neighborhood support.

    For an edge (m, n = m + d): sum over window offsets o_k of m and steps s in
    {0, 8 neighbors} of a(m, o_k) * (W_prev + I)(m + o_k, m + o_k + s) *
    a(n, o_k + s - d), keeping terms whose last offset lies in n's window.
    """
    hq = q // 2
    offs = window_offsets(q)
    index = {o: j for j, o in enumerate(offs)}
    h, w = a.shape[1:]
    nb = neighbor_weights(w4_prev)
    steps = [((0, 0), np.ones((h, w)))]
    for j, (k, sgn) in enumerate(NEIGHBORS):
        dy, dx = EDGE_OFFSETS[k]
        steps.append(((sgn * dy, sgn * dx), nb[j]))
    a_at = [np.stack([shifted(a[j], dy, dx) for j in range(q * q)]) for dy, dx in EDGE_OFFSETS]
    out = np.zeros((4, h, w))
    for jk, (oy, ox) in enumerate(offs):
        ak = a[jk]
        if not ak.any():
            continue
        for (sy, sx), ws in steps:
            p = ak * shifted(ws, oy, ox)
            for k, (dy, dx) in enumerate(EDGE_OFFSETS):
                ly, lx = oy + sy - dy, ox + sx - dx
                if abs(ly) > hq or abs(lx) > hq:
                    continue
                out[k] += p * a_at[k][index[(ly, lx)]]
    # edges leaving the grid carry nothing
    for k, (dy, dx) in enumerate(EDGE_OFFSETS):
        out[k] *= shifted(np.ones((h, w)), dy, dx)
    return out
