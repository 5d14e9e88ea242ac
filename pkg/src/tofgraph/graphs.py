"""Intra-frame, inter-frame, mapped and fused pixel graphs.

All graphs live on the 8-connected pixel grid. Edge weights are stored once per
undirected edge in a (4, H, W) array (see ``kernels``), which makes symmetry hold
by construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter

from . import kernels
from .imaging import DepthFrame, RawFrame, SensorModel, StructureError, checked_keys, raw2d
from .kernels import EDGE_OFFSETS, shifted, window_offsets
from .noise import estimate_sigma


@dataclass(frozen=True)
class PixelGraph:
    weights: np.ndarray  # (4, H, W)

    @property
    def shape(self):
        return self.weights.shape[1:]

    @property
    def n_pixels(self):
        return int(np.prod(self.shape))

    @property
    def degree(self) -> np.ndarray:
        return kernels.degree(self.weights)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return kernels.adjacency_apply(self.weights, x)

    def quadratic_form(self, x: np.ndarray) -> float:
        """x^T L x as the sum over edges of w (x_m - x_n)^2."""
        total = 0.0
        for k, (dy, dx) in enumerate(EDGE_OFFSETS):
            diff = shifted(x, dy, dx) - x
            total += float(np.sum(self.weights[k] * diff * diff))
        return total

    def to_sparse(self) -> sp.csr_matrix:
        h, w = self.shape
        idx = np.arange(h * w).reshape(h, w)
        rows, cols, vals = [], [], []
        for k, (dy, dx) in enumerate(EDGE_OFFSETS):
            nb = shifted(idx.astype(float), dy, dx, fill=-1).astype(int)
            m = (nb >= 0) & (self.weights[k] != 0)
            rows.append(idx[m])
            cols.append(nb[m])
            vals.append(self.weights[k][m])
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        W = sp.coo_matrix((np.r_[v, v], (np.r_[r, c], np.r_[c, r])), shape=(h * w, h * w))
        return W.tocsr()

    def laplacian(self) -> sp.csr_matrix:
        W = self.to_sparse()
        return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()

    def edge_triples(self):
        """(m, n, weight) for every stored edge, m < n in row-major index."""
        h, w = self.shape
        idx = np.arange(h * w).reshape(h, w)
        out = []
        for k, (dy, dx) in enumerate(EDGE_OFFSETS):
            nb = shifted(idx.astype(float), dy, dx, fill=-1).astype(int)
            m = nb >= 0
            out.append(np.stack([idx[m], nb[m], self.weights[k][m]], axis=1))
        t = np.concatenate(out)
        lo, hi = np.minimum(t[:, 0], t[:, 1]), np.maximum(t[:, 0], t[:, 1])
        t = np.stack([lo, hi, t[:, 2]], axis=1)
        return t[np.lexsort((t[:, 1], t[:, 0]))]


def grid_mask(shape) -> np.ndarray:
    """(4, H, W) mask of edges whose far end is on the grid."""
    ones = np.ones(shape)
    return np.stack([shifted(ones, dy, dx) for dy, dx in EDGE_OFFSETS]) > 0


@dataclass(frozen=True)
class InterFrameGraph:
    weights: np.ndarray  # (q*q, H, W), rows sum to one over in-grid offsets
    q: int

    @property
    def shape(self):
        return self.weights.shape[1:]

    def to_sparse(self) -> sp.csr_matrix:
        """N x N matrix with entry (m, k) the weight from current m to previous k."""
        h, w = self.shape
        idx = np.arange(h * w).reshape(h, w)
        rows, cols, vals = [], [], []
        for j, (oy, ox) in enumerate(window_offsets(self.q)):
            nb = shifted(idx.astype(float), oy, ox, fill=-1).astype(int)
            m = nb >= 0
            rows.append(idx[m])
            cols.append(nb[m])
            vals.append(self.weights[j][m])
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(h * w, h * w))


@dataclass(frozen=True)
class FeatureField:
    data: np.ndarray  # (H, W, C)

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def dim(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class AttentionParams:
    Q: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        Q, K = np.asarray(self.Q, dtype=float), np.asarray(self.K, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape != K.shape:
            raise StructureError("Q and K must be square matrices of equal size")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "K", K)

    @classmethod
    def identity(cls, dim: int) -> "AttentionParams":
        return cls(np.eye(dim), np.eye(dim))

    @classmethod
    def from_json(cls, path) -> "AttentionParams":
        with open(path) as fh:
            d = json.load(fh)
        return cls.from_dict(d)

    @classmethod
    def from_dict(cls, d) -> "AttentionParams":
        n = int(d.get("dim", round(np.sqrt(len(np.ravel(d["Q"]))))))
        return cls(np.reshape(np.asarray(d["Q"], dtype=float), (n, n)),
                   np.reshape(np.asarray(d["K"], dtype=float), (n, n)))

    def to_dict(self):
        return {"dim": self.Q.shape[0], "Q": self.Q.ravel().tolist(), "K": self.K.ravel().tolist()}


# ---- features ---------------------------------------------------------------

def _patches(a, w):
    """(H, W, w*w) stack of the w x w window around each pixel (edge-replicated)."""
    r = w // 2
    p = np.pad(a, r, mode="edge")
    h, wd = a.shape
    return np.stack([p[r + oy:r + oy + h, r + ox:r + ox + wd] for oy, ox in window_offsets(w)],
                    axis=-1)


def _wrapped_diff(a, axis, period):
    d = np.diff(a, axis=axis, append=np.take(a, [-1], axis=axis))
    if period is not None:
        d = np.mod(d + 0.5 * period, period) - 0.5 * period
    return d


def depth_features(depth: np.ndarray, amplitude: np.ndarray, window: int = 3,
                   depth_scale: float = 1.0, amp_scale: float = 1.0, norm_floor: float = 0.0,
                   period: float | None = None) -> FeatureField:
    """Features from depth/amplitude rasters.

    Channels: forward-difference depth gradients along x and y and the amplitude,
    each taken over the window and mean-removed within it; gradients are divided by
    ``depth_scale`` and amplitude by ``amp_scale``. Each vector v is divided by
    max(||v||, norm_floor), so vectors are unit length unless weaker than the floor
    and the zero vector stays zero. ``period`` makes gradients wrap-aware.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd")
    chans = []
    for a, scale in ((_wrapped_diff(depth, 1, period), depth_scale),
                     (_wrapped_diff(depth, 0, period), depth_scale),
                     (amplitude, amp_scale)):
        p = _patches(a, window)
        chans.append((p - p.mean(axis=-1, keepdims=True)) / scale)
    v = np.concatenate(chans, axis=-1)
    norm = np.sqrt(np.einsum("yxc,yxc->yx", v, v))
    denom = np.maximum(norm, norm_floor)
    out = np.divide(v, denom[..., None], out=np.zeros_like(v), where=denom[..., None] > 0)
    return FeatureField(out)


@dataclass(frozen=True)
class FeatureConfig:
    """Classical geometric features standing in for learned ones.

    ``norm_floor`` is in units of the estimated per-channel noise level; 0 gives
    plain unit normalization. ``presmooth`` is a Gaussian sigma (pixels) applied to
    I/Q before depth is reconstructed for the features only.
    """

    window: int = 3
    presmooth: float = 1.0
    norm_floor: float = 8.0
    noise_sigma: float | None = None  # I/Q noise; estimated when None

    def to_dict(self):
        return {"window": self.window, "presmooth": self.presmooth,
                "norm_floor": self.norm_floor, "noise_sigma": self.noise_sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**checked_keys(d, cls, "graph.features"))


def compute_features(frame, window: int | None = None, model: SensorModel | None = None,
                     cfg: FeatureConfig | None = None) -> FeatureField:
    """Geometric features of a raw frame (or of a depth frame directly).

    For a RawFrame, I/Q are optionally smoothed, depth and amplitude are
    reconstructed, and channels are scaled by the depth/amplitude noise levels
    implied by the I/Q noise sigma. A DepthFrame is used as is with unit scales.
    """
    cfg = cfg or FeatureConfig()
    window = window or cfg.window
    model = model or SensorModel()
    if isinstance(frame, DepthFrame):
        return depth_features(frame.depth, frame.amplitude, window)
    if not isinstance(frame, RawFrame):
        raise TypeError("compute_features expects a RawFrame or DepthFrame")
    i, q = frame.i, frame.q
    if cfg.presmooth > 0:
        i = gaussian_filter(i, cfg.presmooth, mode="nearest")
        q = gaussian_filter(q, cfg.presmooth, mode="nearest")
    df = raw2d(RawFrame(i, q, frame.freq_index), model)
    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else estimate_sigma(frame)
    amp_ref = float(np.median(frame.amplitude))
    if sigma > 0 and amp_ref > 0 and cfg.norm_floor > 0:
        depth_scale = sigma / amp_ref * model.phase_to_depth(frame.freq_index)
        amp_scale = sigma
        floor = cfg.norm_floor
    else:
        depth_scale = model.phase_to_depth(frame.freq_index)
        amp_scale = max(amp_ref, model.amplitude_floor)
        floor = 0.0
    return depth_features(df.depth, df.amplitude, window, depth_scale, amp_scale, floor,
                          period=model.wrap_range(frame.freq_index))


# ---- graphs -----------------------------------------------------------------

def intra_graph(feat: FeatureField, bandwidth: float = 0.5) -> PixelGraph:
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    f = np.moveaxis(feat.data, -1, 0)
    mask = grid_mask(feat.shape)
    w4 = np.empty((4,) + feat.shape)
    for k, (dy, dx) in enumerate(EDGE_OFFSETS):
        diff = shifted(f, dy, dx) - f
        d2 = np.einsum("cyx,cyx->yx", diff, diff)
        w4[k] = np.where(mask[k], np.exp(-d2 / (2.0 * bandwidth**2)), 0.0)
    return PixelGraph(w4)


def inter_graph(feat_t: FeatureField, feat_prev: FeatureField, params: AttentionParams | None = None,
                q: int = 7, temperature: float = 1.0) -> InterFrameGraph:
    """Softmax attention of each pixel over the q x q window of the previous frame.

    Scores (Q F_t(m)) . (K F_prev(k)) are divided by ``temperature`` before the
    softmax; off-grid neighbors are excluded.
    """
    if q < 1 or q % 2 == 0:
        raise ValueError("q must be odd")
    if feat_t.data.shape != feat_prev.data.shape:
        raise StructureError("feature fields differ in shape")
    if params is None:
        params = AttentionParams.identity(feat_t.dim)
    if params.Q.shape[0] != feat_t.dim:
        raise StructureError(f"attention matrices are {params.Q.shape}, features have {feat_t.dim} dims")
    qf = feat_t.data @ params.Q.T
    kf = feat_prev.data @ params.K.T
    e = kernels.attention_scores(qf, kf, q) / temperature
    e = e - e.max(axis=0, keepdims=True)
    a = np.exp(e)
    a /= a.sum(axis=0, keepdims=True)
    return InterFrameGraph(a, q)


def mapping_confidence(feat_t: FeatureField, feat_prev: FeatureField, inter: InterFrameGraph | int,
                       bandwidth: float = 0.5) -> np.ndarray:
    """Per-pixel confidence exp(-min_k ||F_t(m) - F_prev(k)||^2 / (2 bw^2)) over the window."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    q = inter.q if isinstance(inter, InterFrameGraph) else int(inter)
    d2 = kernels.min_feature_distance(feat_t.data, feat_prev.data, q)
    return np.exp(-d2 / (2.0 * bandwidth**2))


def map_graph(prev: PixelGraph, inter: InterFrameGraph) -> PixelGraph:
    if prev.shape != inter.shape:
        raise StructureError("graph shapes differ")
    return PixelGraph(kernels.map_graph(inter.weights, prev.weights, inter.q))


def fuse_graphs(mapped: PixelGraph, cur: PixelGraph, confidence: np.ndarray) -> PixelGraph:
    """w~(m, n) = (phi(m) + phi(n)) / 2 * w^(m, n) + w(m, n)."""
    if mapped.shape != cur.shape or confidence.shape != cur.shape:
        raise StructureError("graph shapes differ")
    w4 = np.empty_like(cur.weights)
    for k, (dy, dx) in enumerate(EDGE_OFFSETS):
        phi = 0.5 * (confidence + shifted(confidence, dy, dx))
        w4[k] = phi * mapped.weights[k] + cur.weights[k]
    return PixelGraph(w4)


def write_graph_csv(graph: PixelGraph, path):
    t = graph.edge_triples()
    with open(path, "w") as fh:
        fh.write("m,n,weight\n")
        for m, n, w in t:
            fh.write(f"{int(m)},{int(n)},{w:.17g}\n")
