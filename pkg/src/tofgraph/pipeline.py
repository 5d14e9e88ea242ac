"""Frame-sequence denoising: graph construction per frame pair, then the MAP solver."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import (AttentionParams, FeatureConfig, compute_features, fuse_graphs, inter_graph,
                     intra_graph, map_graph, mapping_confidence)
from .imaging import RawFrame, SensorModel, checked_keys, frames_to_depth
from .solver import SolverConfig, map_denoise_frame


@dataclass(frozen=True)
class GraphConfig:
    q: int = 7
    sigma_f: float = 0.5
    sigma_c: float = 0.5
    features: FeatureConfig = field(default_factory=FeatureConfig)
    attention: AttentionParams | None = None
    temperature: float = 0.03

    def __post_init__(self):
        if self.q < 1 or self.q % 2 == 0:
            raise ValueError("window size q must be a positive odd integer")
        if min(self.sigma_f, self.sigma_c, self.temperature) <= 0:
            raise ValueError("sigma_f, sigma_c and temperature must be positive")

    def to_dict(self):
        return {"q": self.q, "sigma_f": self.sigma_f, "sigma_c": self.sigma_c, "temperature": self.temperature,
                "features": self.features.to_dict(),
                "attention": None if self.attention is None else self.attention.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "GraphConfig":
        d = dict(checked_keys(d, cls, "graph"))
        if d.get("features") is not None:
            d["features"] = FeatureConfig.from_dict(d["features"])
        else:
            d.pop("features", None)
        if d.get("attention") is not None:
            d["attention"] = AttentionParams.from_dict(d["attention"])
        return cls(**d)


@dataclass
class FrameGraphs:
    fused: object
    intra: object
    confidence: np.ndarray | None = None
    inter: object = None
    mapped: object = None


def build_graphs(raw_t: RawFrame, raw_prev: RawFrame | None, model: SensorModel, gcfg: GraphConfig,
                 fuse: bool = True, confidence_override: float | None = None,
                 feat_cache: dict | None = None) -> FrameGraphs:
    """Fused graph for frame t given its reference frame (or the intra graph alone).

    ``confidence_override`` replaces the mapping confidence by a constant (0 reduces
    fusion to the single-frame graph).
    """
    def feats(raw):
        # keyed by identity; the cache holds the frame too so the id stays unique
        hit = feat_cache.get(id(raw)) if feat_cache is not None else None
        if hit is not None and hit[0] is raw:
            return hit[1]
        f = compute_features(raw, model=model, cfg=gcfg.features)
        if feat_cache is not None:
            feat_cache[id(raw)] = (raw, f)
        return f

    f_t = feats(raw_t)
    w_t = intra_graph(f_t, gcfg.sigma_f)
    if raw_prev is None or not fuse:
        return FrameGraphs(w_t, w_t)
    f_p = feats(raw_prev)
    w_p = intra_graph(f_p, gcfg.sigma_f)
    inter = inter_graph(f_t, f_p, gcfg.attention, gcfg.q, gcfg.temperature)
    if confidence_override is not None:
        phi = np.full(raw_t.shape, float(confidence_override))
    else:
        phi = mapping_confidence(f_t, f_p, inter, gcfg.sigma_c)
    mapped = map_graph(w_p, inter)
    return FrameGraphs(fuse_graphs(mapped, w_t, phi), w_t, phi, inter, mapped)


def denoise_frame(raws_t, raws_prev, model: SensorModel, gcfg: GraphConfig, scfg: SolverConfig,
                  mode: str = "fused", confidence_override: float | None = None,
                  traces: list | None = None, feat_cache: dict | None = None):
    """Denoise one frame (one RawFrame per frequency); returns denoised raws and graphs.

    Frequencies are denoised independently with the same configuration. The same
    fused graph serves both the I and the Q component.
    """
    out, graphs = [], []
    for k, raw in enumerate(raws_t):
        prev = None if raws_prev is None else raws_prev[k]
        g = build_graphs(raw, prev, model, gcfg, fuse=(mode == "fused"),
                         confidence_override=confidence_override, feat_cache=feat_cache)
        tr = [] if traces is not None else None
        out.append(map_denoise_frame(raw, (g.fused, g.fused), scfg, trace=tr))
        if traces is not None:
            traces.append({"freq_index": k, "rows": tr})
        graphs.append(g)
    return tuple(out), graphs


@dataclass
class DenoiseResult:
    raws: list  # per frame: tuple of denoised RawFrame
    depths: list  # per frame: merged DepthFrame
    traces: list = field(default_factory=list)


def denoise_sequence(noisy: list, model: SensorModel, gcfg: GraphConfig | None = None,
                     scfg: SolverConfig | None = None, mode: str = "fused", dt: int = 1,
                     confidence_override: float | None = None, trace: bool = False) -> DenoiseResult:
    """Denoise a sequence of frames (each a tuple of per-frequency RawFrames).

    Frame t uses the noisy frame t - dt as reference; frames without a reference
    fall back to single-frame processing.
    """
    gcfg = gcfg or GraphConfig()
    scfg = scfg or SolverConfig()
    if mode not in ("single", "fused"):
        raise ValueError(f"unknown mode {mode!r}")
    raws, depths, traces = [], [], []
    cache = {}
    for t, frame in enumerate(noisy):
        prev = noisy[t - dt] if t - dt >= 0 else None
        tr = [] if trace else None
        den, _ = denoise_frame(frame, prev, model, gcfg, scfg, mode, confidence_override, tr, cache)
        raws.append(den)
        depths.append(frames_to_depth(den, model))
        if trace:
            traces.extend({"frame": t, **row} for row in tr)
        # frames before t - dt + 1 are never a reference again
        keep = {id(r) for f in noisy[max(0, t - dt + 1):t + 1] for r in f}
        for key in [k for k in cache if k not in keep]:
            del cache[key]
    return DenoiseResult(raws, depths, traces)
