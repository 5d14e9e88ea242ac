# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the grid-graph hot loops.

Array layouts are those of ``_kernels_py``. Every function parallelises over
image rows; each output element is written by exactly one thread and summed in
a fixed order, so results do not depend on the thread count.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport INFINITY

cnp.import_array()

cdef int _DY[4]
cdef int _DX[4]
_DY[:] = [0, 1, 1, 1]
_DX[:] = [1, 0, 1, -1]

cdef int _threads = 1


def set_num_threads(int n):
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n


def get_num_threads():
    return _threads


def degree(double[:, :, ::1] w4):
    cdef Py_ssize_t h = w4.shape[1], w = w4.shape[2]
    cdef Py_ssize_t y, x, k, py, px
    cdef double s
    out_arr = np.zeros((h, w))
    cdef double[:, ::1] out = out_arr
    for y in prange(h, nogil=True, num_threads=_threads, schedule="static"):
        for x in range(w):
            s = 0.0
            for k in range(4):
                s = s + w4[k, y, x]
                py = y - _DY[k]
                px = x - _DX[k]
                if py >= 0 and px >= 0 and px < w:
                    s = s + w4[k, py, px]
            out[y, x] = s
    return out_arr


cdef inline double _apply_at(const double* w4, const double* v, Py_ssize_t y, Py_ssize_t x,
                             Py_ssize_t h, Py_ssize_t w) noexcept nogil:
    """(W v)(y, x); ``w4`` and ``v`` point at C-contiguous (4, H, W) and (H, W) data."""
    cdef double s = 0.0
    cdef Py_ssize_t k, ny, nx, plane = h * w
    for k in range(4):
        ny = y + _DY[k]
        nx = x + _DX[k]
        if ny < h and nx >= 0 and nx < w:
            s += w4[k * plane + y * w + x] * v[ny * w + nx]
        ny = y - _DY[k]
        nx = x - _DX[k]
        if ny >= 0 and nx >= 0 and nx < w:
            s += w4[k * plane + ny * w + nx] * v[ny * w + nx]
    return s


def adjacency_apply(double[:, :, ::1] w4, double[:, ::1] v):
    cdef Py_ssize_t h = v.shape[0], w = v.shape[1]
    cdef Py_ssize_t y, x
    out_arr = np.empty((h, w))
    cdef double[:, ::1] out = out_arr
    cdef const double* wp = &w4[0, 0, 0]
    cdef const double* vp = &v[0, 0]
    for y in prange(h, nogil=True, num_threads=_threads, schedule="static"):
        for x in range(w):
            out[y, x] = _apply_at(wp, vp, y, x, h, w)
    return out_arr


def unrolled_iterations(double[:, ::1] b, double[:, ::1] lam, double[:, :, ::1] w4,
                        double[:, ::1] deg, int n_iter):
    cdef Py_ssize_t h = b.shape[0], w = b.shape[1]
    cdef Py_ssize_t y, x
    cdef int it
    cur_arr = np.array(b, copy=True)
    nxt_arr = np.empty((h, w))
    cdef double[:, ::1] cur = cur_arr
    cdef double[:, ::1] nxt = nxt_arr
    cdef double[:, ::1] tmp
    cdef const double* wp = &w4[0, 0, 0]
    cdef const double* cp
    for it in range(n_iter):
        cp = &cur[0, 0]
        for y in prange(h, nogil=True, num_threads=_threads, schedule="static"):
            for x in range(w):
                nxt[y, x] = (b[y, x] + lam[y, x] * _apply_at(wp, cp, y, x, h, w)) / (
                    1.0 + lam[y, x] * deg[y, x])
        tmp = cur
        cur = nxt
        nxt = tmp
    return np.asarray(cur)


def attention_scores(double[:, :, ::1] qf, double[:, :, ::1] kf, int q):
    cdef Py_ssize_t h = qf.shape[0], w = qf.shape[1], c = qf.shape[2]
    cdef int hq = q // 2
    cdef Py_ssize_t y, x, j, ch, py, px
    cdef int oy, ox
    cdef double s
    out_arr = np.empty((q * q, h, w))
    cdef double[:, :, ::1] out = out_arr
    for y in prange(h, nogil=True, num_threads=_threads, schedule="static"):
        for x in range(w):
            j = 0
            for oy in range(-hq, hq + 1):
                for ox in range(-hq, hq + 1):
                    py = y + oy
                    px = x + ox
                    if py < 0 or py >= h or px < 0 or px >= w:
                        out[j, y, x] = -INFINITY
                    else:
                        s = 0.0
                        for ch in range(c):
                            s = s + qf[y, x, ch] * kf[py, px, ch]
                        out[j, y, x] = s
                    j = j + 1
    return out_arr


def min_feature_distance(double[:, :, ::1] ft, double[:, :, ::1] fp, int q):
    cdef Py_ssize_t h = ft.shape[0], w = ft.shape[1], c = ft.shape[2]
    cdef int hq = q // 2
    cdef Py_ssize_t y, x, ch, py, px
    cdef int oy, ox
    cdef double s, d, best
    out_arr = np.empty((h, w))
    cdef double[:, ::1] out = out_arr
    for y in prange(h, nogil=True, num_threads=_threads, schedule="static"):
        for x in range(w):
            best = INFINITY
            for oy in range(-hq, hq + 1):
                for ox in range(-hq, hq + 1):
                    py = y + oy
                    px = x + ox
                    if py < 0 or py >= h or px < 0 or px >= w:
                        continue
                    s = 0.0
                    for ch in range(c):
                        d = ft[y, x, ch] - fp[py, px, ch]
                        s = s + d * d
                    if s < best:
                        best = s
            out[y, x] = best
    return out_arr


def _step_table(double[:, :, ::1] w4):
    """(9, H, W): entry 3*(sy+1)+(sx+1) is the (W + I) weight between p and p + (sy, sx)."""
    cdef Py_ssize_t h = w4.shape[1], w = w4.shape[2]
    cdef Py_ssize_t y, x, ny, nx
    cdef int k
    t_arr = np.zeros((9, h, w))
    cdef double[:, :, ::1] t = t_arr
    for y in range(h):
        for x in range(w):
            t[4, y, x] = 1.0
            for k in range(4):
                ny = y + _DY[k]
                nx = x + _DX[k]
                if ny < h and nx >= 0 and nx < w:
                    t[3 * (_DY[k] + 1) + _DX[k] + 1, y, x] = w4[k, y, x]
                ny = y - _DY[k]
                nx = x - _DX[k]
                if ny >= 0 and nx >= 0 and nx < w:
                    t[3 * (1 - _DY[k]) + 1 - _DX[k], y, x] = w4[k, ny, nx]
    return t_arr


def map_graph(double[:, :, ::1] a, double[:, :, ::1] w4_prev, int q):
    """A (W_prev + I) A^T on the 8-neighbourhood support (see ``_kernels_py.map_graph``).

    out[k](m) = sum over window offsets o of m and steps s of
    a_m[o] * (W_prev + I)(m + o, m + o + s) * a_n[o + s - d_k], with n = m + d_k.
    The innermost loop runs along a window row, over contiguous memory.
    """
    cdef Py_ssize_t h = a.shape[1], w = a.shape[2]
    cdef int hq = q // 2, qq = q * q
    cdef Py_ssize_t y, x, ny, nx, py, plane = h * w
    cdef int k, oy, ox, sy, sx, ly, ox0, ox1, dy, dx
    cdef double acc
    cdef const double* am
    cdef const double* an
    cdef const double* ws
    ap_arr = np.ascontiguousarray(np.moveaxis(np.asarray(a), 0, -1))  # pixel-major windows
    cdef const double[:, :, ::1] ap = ap_arr
    tab_arr = _step_table(w4_prev)
    cdef const double[:, :, ::1] tab = tab_arr
    cdef const double* app = &ap[0, 0, 0]
    cdef const double* tp = &tab[0, 0, 0]
    out_arr = np.zeros((4, h, w))
    cdef double[:, :, ::1] out = out_arr
    for y in prange(h, nogil=True, num_threads=_threads, schedule="static"):
        for x in range(w):
            am = app + (y * w + x) * qq
            for k in range(4):
                dy = _DY[k]
                dx = _DX[k]
                ny = y + dy
                nx = x + dx
                if ny >= h or nx < 0 or nx >= w:
                    continue
                an = app + (ny * w + nx) * qq
                acc = 0.0
                for sy in range(-1, 2):
                    for sx in range(-1, 2):
                        # ox range: m + o on the grid and o + s - d inside n's window
                        ox0 = max(-hq, max(-x, dx - sx - hq))
                        ox1 = min(hq, min(w - 1 - x, dx - sx + hq))
                        if ox0 > ox1:
                            continue
                        for oy in range(-hq, hq + 1):
                            py = y + oy
                            ly = oy + sy - dy
                            if py < 0 or py >= h or ly < -hq or ly > hq:
                                continue
                            ws = tp + (3 * (sy + 1) + sx + 1) * plane + py * w + x
                            for ox in range(ox0, ox1 + 1):
                                acc = acc + am[(oy + hq) * q + ox + hq] * ws[ox] * an[
                                    (ly + hq) * q + ox + sx - dx + hq]
                out[k, y, x] = acc
    return out_arr
