"""Continuous-wave ToF image formation and depth reconstruction.

Rasters are float64 numpy arrays of shape ``(height, width)``. Depth is z-depth
in meters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LIGHT_SPEED = 2.99792458e8
TWO_PI = 2.0 * np.pi

# phases this close below 2*pi are float noise at the wrap seam
_SEAM_EPS = 1e-12


class StructureError(ValueError):
    """Raster shapes or counts that do not line up."""


def checked_keys(d: dict, cls, section: str) -> dict:
    """``d`` unchanged if every key names a field of dataclass ``cls``."""
    if not isinstance(d, dict):
        raise ValueError(f"{section}: expected an object, got {type(d).__name__}")
    unknown = sorted(set(d) - set(cls.__dataclass_fields__))
    if unknown:
        raise ValueError(f"{section}: unknown keys {unknown}")
    return d


@dataclass(frozen=True)
class SensorModel:
    mod_freqs: tuple = (20e6, 60e6)
    phase_offsets: tuple = (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)
    light_speed: float = LIGHT_SPEED
    amplitude_floor: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "mod_freqs", tuple(float(f) for f in self.mod_freqs))
        object.__setattr__(self, "phase_offsets", tuple(float(t) for t in self.phase_offsets))
        if not 1 <= len(self.mod_freqs) <= 2:
            raise ValueError("one or two modulation frequencies expected")
        if any(f <= 0 for f in self.mod_freqs):
            raise ValueError("modulation frequencies must be positive")
        if len(set(np.round(np.mod(self.phase_offsets, TWO_PI), 12))) < 3:
            raise ValueError("at least three distinct phase offsets are required")
        if self.amplitude_floor <= 0:
            raise ValueError("amplitude_floor must be positive")

    def wrap_range(self, freq_index: int = 0) -> float:
        """Unambiguous depth range c / (2 f) for one frequency."""
        return self.light_speed / (2.0 * self.mod_freqs[freq_index])

    def phase_to_depth(self, freq_index: int = 0) -> float:
        return self.light_speed / (4.0 * np.pi * self.mod_freqs[freq_index])

    @property
    def max_range(self) -> float:
        """Depth range covered by the (merged) frequency set."""
        return max(self.wrap_range(k) for k in range(len(self.mod_freqs)))

    @property
    def gain(self) -> float:
        """I/Q magnitude per unit of correlation amplitude alpha/2.

        Exact only for balanced offset sets, where the offsets' first and second
        circular moments vanish (e.g. equally spaced taps).
        """
        return len(self.phase_offsets) / 2.0

    @property
    def balanced(self) -> bool:
        th = np.asarray(self.phase_offsets)
        return bool(abs(np.exp(-1j * th).sum()) < 1e-9 and abs(np.exp(-2j * th).sum()) < 1e-9)

    def to_dict(self) -> dict:
        return {
            "mod_freqs": list(self.mod_freqs),
            "phase_offsets": list(self.phase_offsets),
            "light_speed": self.light_speed,
            "amplitude_floor": self.amplitude_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorModel":
        return cls(**checked_keys(d, cls, "sensor"))


@dataclass(frozen=True)
class RawFrame:
    i: np.ndarray
    q: np.ndarray
    freq_index: int = 0

    def __post_init__(self):
        if self.i.shape != self.q.shape or self.i.ndim != 2:
            raise StructureError(f"I/Q raster shapes differ: {self.i.shape} vs {self.q.shape}")
        if not (np.all(np.isfinite(self.i)) and np.all(np.isfinite(self.q))):
            raise ValueError("I/Q rasters must be finite")

    @property
    def shape(self):
        return self.i.shape

    @property
    def amplitude(self) -> np.ndarray:
        return np.hypot(self.i, self.q)


@dataclass(frozen=True)
class CorrelationFrame:
    samples: np.ndarray  # (n_offsets, H, W)
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def shape(self):
        return self.samples.shape[1:]


@dataclass(frozen=True)
class DepthFrame:
    depth: np.ndarray
    amplitude: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.valid is None:
            object.__setattr__(self, "valid", np.ones(self.depth.shape, dtype=bool))
        if not (self.depth.shape == self.amplitude.shape == self.valid.shape):
            raise StructureError("depth, amplitude and validity rasters must share a shape")

    @property
    def shape(self):
        return self.depth.shape


def _as_raster(a, shape) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.full(shape, float(a))
    if a.shape != shape:
        raise StructureError(f"raster shape {a.shape} does not match {shape}")
    return a


def correlate(depth, alpha, beta, model: SensorModel, freq_index: int = 0) -> CorrelationFrame:
    """Ideal correlation samples (alpha/2) cos(phi + theta) + beta for every offset."""
    d = depth.depth if isinstance(depth, DepthFrame) else np.asarray(depth, dtype=float)
    alpha = _as_raster(alpha, d.shape)
    beta = _as_raster(beta, d.shape)
    if np.any(alpha < 0):
        raise ValueError("alpha must be non-negative")
    phi = d / model.phase_to_depth(freq_index)
    samples = np.stack([0.5 * alpha * np.cos(phi + th) + beta for th in model.phase_offsets])
    return CorrelationFrame(samples, alpha, beta)


def _offset_weights(model: SensorModel):
    # exact zeros/ones for the quarter-period taps keep ambient light from leaking in
    th = np.asarray(model.phase_offsets)
    cw, sw = np.cos(th), -np.sin(th)
    for w in (cw, sw):
        for ref in (-1.0, 0.0, 1.0):
            w[np.abs(w - ref) < 1e-15] = ref
    return cw, sw


def extract_iq(corr: CorrelationFrame, model: SensorModel, freq_index: int = 0) -> RawFrame:
    if corr.samples.shape[0] != len(model.phase_offsets):
        raise StructureError(
            f"{corr.samples.shape[0]} correlation rasters for {len(model.phase_offsets)} offsets"
        )
    cw, sw = _offset_weights(model)
    i = np.tensordot(cw, corr.samples, axes=1)
    q = np.tensordot(sw, corr.samples, axes=1)
    return RawFrame(i, q, freq_index)


def wrapped_phase(i: np.ndarray, q: np.ndarray) -> np.ndarray:
    """atan2 phase mapped to [0, 2*pi)."""
    phi = np.arctan2(q, i)
    phi = np.where(phi < 0, phi + TWO_PI, phi)
    return np.where(phi >= TWO_PI * (1 - _SEAM_EPS), 0.0, phi)


def raw2d(raw: RawFrame, model: SensorModel) -> DepthFrame:
    phi = wrapped_phase(raw.i, raw.q)
    amp = raw.amplitude
    valid = amp >= model.amplitude_floor
    depth = phi * model.phase_to_depth(raw.freq_index)
    return DepthFrame(depth, amp, valid)


def depth_to_raw(depth, alpha, beta, model: SensorModel, freq_index: int = 0) -> RawFrame:
    return extract_iq(correlate(depth, alpha, beta, model, freq_index), model, freq_index)


def roundtrip_residual(depth: DepthFrame, model: SensorModel, freq_index: int = 0,
                       beta: float = 0.0) -> float:
    """Max |depth error| of the noiseless correlate -> extract_iq -> raw2d chain."""
    alpha = depth.amplitude / (model.gain / 2.0)
    out = raw2d(depth_to_raw(depth.depth, alpha, beta, model, freq_index), model)
    mask = depth.valid & out.valid
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(out.depth[mask] - depth.depth[mask])))


def unwrap_dual_freq(d_low: DepthFrame, d_high: DepthFrame, model: SensorModel,
                     max_residual: float | None = None, return_wraps: bool = False):
    """Unwrap the high-frequency depth against the low-frequency one.

    The wrap count k of the high frequency is searched over the wraps that fit in
    the low-frequency range; pixels whose best residual still exceeds
    ``max_residual`` (default: half a high-frequency wrap) are invalid.
    """
    if d_low.shape != d_high.shape:
        raise StructureError(f"depth shapes differ: {d_low.shape} vs {d_high.shape}")
    if len(model.mod_freqs) != 2:
        raise ValueError("dual-frequency unwrapping needs two frequencies")
    f0, f1 = model.mod_freqs
    lo, hi = (0, 1) if f0 < f1 else (1, 0)
    if f0 == f1:
        raise ValueError("frequencies must differ")
    w_hi = model.wrap_range(hi)
    n_wraps = int(np.ceil(model.wrap_range(lo) / w_hi - 1e-9))
    if max_residual is None:
        max_residual = 0.5 * w_hi

    k = np.rint((d_low.depth - d_high.depth) / w_hi)
    k = np.clip(k, 0, n_wraps - 1)
    out = d_high.depth + k * w_hi
    resid = np.abs(out - d_low.depth)
    valid = d_low.valid & d_high.valid & (resid <= max_residual)
    frame = DepthFrame(out, d_high.amplitude, valid)
    if return_wraps:
        return frame, k.astype(int)
    return frame


def frames_to_depth(raws, model: SensorModel) -> DepthFrame:
    """Depth from one raw frame per configured frequency (merged when there are two)."""
    if len(raws) != len(model.mod_freqs):
        raise StructureError(f"expected {len(model.mod_freqs)} raw frames, got {len(raws)}")
    depths = [raw2d(r, model) for r in raws]
    if len(depths) == 1:
        return depths[0]
    lo = int(np.argmin(model.mod_freqs))
    return unwrap_dual_freq(depths[lo], depths[1 - lo], model)
