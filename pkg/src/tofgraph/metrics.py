"""Depth accuracy and temporal-consistency metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .imaging import DepthFrame, StructureError


class MetricError(ValueError):
    pass


def _valid_pair(pred: DepthFrame, gt: DepthFrame):
    if pred.shape != gt.shape:
        raise StructureError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = pred.valid & gt.valid
    if not mask.any():
        raise MetricError("no pixel is valid in both prediction and ground truth")
    return pred.depth[mask], gt.depth[mask]


def _positive(g):
    if np.any(g <= 0):
        raise MetricError("ground-truth depth must be positive on valid pixels")


def mae(pred: DepthFrame, gt: DepthFrame) -> float:
    p, g = _valid_pair(pred, gt)
    return float(np.mean(np.abs(p - g)))


def absrel(pred: DepthFrame, gt: DepthFrame) -> float:
    p, g = _valid_pair(pred, gt)
    _positive(g)
    return float(np.mean(np.abs(p - g) / g))


def delta1(pred: DepthFrame, gt: DepthFrame, threshold: float = 1.25) -> float:
    p, g = _valid_pair(pred, gt)
    _positive(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
    return float(np.mean(ratio < threshold))


def bilinear_sample(img: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Sample img at continuous (col, row) coordinates inside [0, W-1] x [0, H-1]."""
    h, w = img.shape
    x = np.clip(coords[..., 0], 0, w - 1)
    y = np.clip(coords[..., 1], 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(int), w - 2) if w > 1 else np.zeros_like(x, dtype=int)
    y0 = np.minimum(np.floor(y).astype(int), h - 2) if h > 1 else np.zeros_like(y, dtype=int)
    fx, fy = x - x0, y - y0
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _sample_valid(valid: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """All four bilinear taps valid."""
    h, w = valid.shape
    x = np.clip(coords[..., 0], 0, w - 1)
    y = np.clip(coords[..., 1], 0, h - 1)
    x0, y0 = np.floor(x).astype(int), np.floor(y).astype(int)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    return valid[y0, x0] & valid[y0, x1] & valid[y1, x0] & valid[y1, x1]


def temporal_differences(pred_seq, gt_seq, corr_seq):
    """Per consecutive pair: (delta_pred, delta_gt) over unoccluded pixels valid in both."""
    if not (len(pred_seq) == len(gt_seq) == len(corr_seq)):
        raise StructureError("sequences are not aligned")
    out = []
    for t in range(len(gt_seq)):
        c = corr_seq[t]
        if c is None:
            continue
        prev = t - c.dt
        if prev < 0:
            raise MetricError(f"correspondence of frame {t} points before the sequence")
        ok = ~c.occluded
        coords = np.where(ok[..., None], c.coords, 0.0)
        ok &= pred_seq[t].valid & gt_seq[t].valid
        ok &= _sample_valid(pred_seq[prev].valid & gt_seq[prev].valid, coords)
        dp = pred_seq[t].depth - bilinear_sample(pred_seq[prev].depth, coords)
        dg = gt_seq[t].depth - bilinear_sample(gt_seq[prev].depth, coords)
        out.append((dp[ok], dg[ok]))
    return out


def tepe(pred_seq, gt_seq, corr_seq) -> float:
    """Mean |delta_pred - delta_gt| of temporal depth changes along correspondence."""
    if len(gt_seq) > 1 and all(c is None for c in corr_seq[1:]):
        raise MetricError("missing correspondence")
    diffs = temporal_differences(pred_seq, gt_seq, corr_seq)
    errs = [np.abs(dp - dg) for dp, dg in diffs]
    if not errs or sum(e.size for e in errs) == 0:
        raise MetricError("no unoccluded valid pixel pairs")
    return float(np.concatenate(errs).mean())


def xt_slice(seq, row: int) -> np.ndarray:
    """(T, W) raster: the given row of every frame stacked over time."""
    h = seq[0].shape[0]
    if not 0 <= row < h:
        raise IndexError(f"row {row} outside [0, {h})")
    return np.stack([f.depth[row] if isinstance(f, DepthFrame) else np.asarray(f)[row] for f in seq])


@dataclass
class EvalReport:
    mae: list
    absrel: list
    delta1: list
    valid_pixels: list
    tepe: float | None = None
    mean: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def evaluate(pred_seq, gt_seq, corr_seq=None) -> EvalReport:
    rows = {"mae": [], "absrel": [], "delta1": [], "valid_pixels": []}
    for p, g in zip(pred_seq, gt_seq, strict=True):
        rows["mae"].append(mae(p, g))
        rows["absrel"].append(absrel(p, g))
        rows["delta1"].append(delta1(p, g))
        rows["valid_pixels"].append(int((p.valid & g.valid).sum()))
    t = tepe(pred_seq, gt_seq, corr_seq) if corr_seq is not None else None
    mean = {k: float(np.mean(rows[k])) for k in ("mae", "absrel", "delta1")}
    if t is not None:
        mean["tepe"] = t
    return EvalReport(rows["mae"], rows["absrel"], rows["delta1"], rows["valid_pixels"], t, mean)
