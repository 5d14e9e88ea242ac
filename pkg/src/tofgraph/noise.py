"""AWGN on I/Q rasters and the resulting phase/depth error density.

Density functions return the density of the phase error
``psi = 4 pi f n_d / c`` per radian, evaluated at a depth error ``n_d``; multiply
by :func:`phase_jacobian` for a density per meter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfcx

from .imaging import LIGHT_SPEED, RawFrame, SensorModel, raw2d

_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "seed": self.seed}


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, *key).

    Keys are appended to the seed's entropy, so substreams never depend on how many
    other streams were drawn before.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in key]]))


def add_awgn(raw: RawFrame, spec: NoiseSpec, rng: np.random.Generator | None = None) -> RawFrame:
    if spec.sigma == 0:
        return RawFrame(raw.i.copy(), raw.q.copy(), raw.freq_index)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n = rng.standard_normal((2,) + raw.shape) * spec.sigma
    return RawFrame(raw.i + n[0], raw.q + n[1], raw.freq_index)


def phase_jacobian(freq: float, light_speed: float = LIGHT_SPEED) -> float:
    """d(psi)/d(n_d) = 4 pi f / c."""
    return 4.0 * np.pi * freq / light_speed


def _check_gamma(gamma):
    if np.any(np.asarray(gamma) <= 0):
        raise ValueError("gamma must be positive")


def depth_noise_pdf_exact(n_d, gamma, freq, light_speed: float = LIGHT_SPEED):
    """Phase-error density of a complex Gaussian with noise-to-amplitude ratio gamma."""
    _check_gamma(gamma)
    psi = phase_jacobian(freq, light_speed) * np.asarray(n_d, dtype=float)
    c, s = np.cos(psi), np.sin(psi)
    u = c / (gamma * np.sqrt(2.0))
    floor = np.exp(-0.5 / gamma**2)
    front = (c / (2.0 * gamma * _SQRT2PI)) * (1.0 + erf(u)) * np.exp(-(s * s) / (2.0 * gamma * gamma))
    # for c < 0 both terms are O(floor); the scaled complement keeps the exponent out
    back = floor * (1.0 / (2.0 * np.pi) + c / (2.0 * gamma * _SQRT2PI) * erfcx(np.abs(u)))
    p = np.where(c >= 0, front + floor / (2.0 * np.pi), back)
    return np.maximum(p, 0.0)


def depth_noise_pdf_approx(n_d, gamma, freq, light_speed: float = LIGHT_SPEED):
    """Small-gamma form: erf saturated to 1, uniform floor dropped.

    Negative for |psi| > pi/2; the approximation is only meant for the half period
    around zero.
    """
    _check_gamma(gamma)
    psi = phase_jacobian(freq, light_speed) * np.asarray(n_d, dtype=float)
    s = np.sin(psi)
    return np.cos(psi) / (gamma * _SQRT2PI) * np.exp(-(s * s) / (2.0 * gamma * gamma))


def depth_noise_std(gamma: float, freq: float, light_speed: float = LIGHT_SPEED) -> float:
    """Small-noise standard deviation of the depth error, gamma * c / (4 pi f)."""
    return gamma / phase_jacobian(freq, light_speed)


@dataclass
class DepthNoiseHistogram:
    edges: np.ndarray  # depth-error bin edges (m)
    counts: np.ndarray
    n_samples: int
    gamma: float
    freq: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.n_samples

    def phase_density(self) -> np.ndarray:
        """Empirical density per radian of phase error."""
        width = np.diff(self.edges) * phase_jacobian(self.freq)
        return self.probabilities / width


def _draw_depths(amplitude, sigma, phi0, n, rng, model, freq_index):
    n_iq = rng.standard_normal((2, n)) * sigma
    raw = RawFrame(
        (amplitude * np.cos(phi0) + n_iq[0])[None, :],
        (amplitude * np.sin(phi0) + n_iq[1])[None, :],
        freq_index,
    )
    d = raw2d(raw, model).depth[0]
    return d


def monte_carlo_depth_noise(depth: float, amplitude: float, spec: NoiseSpec, model: SensorModel,
                            n_samples: int = 10**6, freq_index: int = 0, n_bins: int = 101,
                            half_width: float | None = None, n_streams: int = 1,
                            ) -> DepthNoiseHistogram:
    """Histogram of the depth error of one pixel under I/Q AWGN.

    Samples are split over ``n_streams`` substreams ``substream(seed, k)``; the
    result depends on ``n_streams`` but not on evaluation order. Bins are
    equal-width over +-4 analytic standard deviations unless ``half_width`` is
    given. Errors are wrapped to the nearest representative of the phase period.
    """
    if n_samples < 10**4:
        raise ValueError("n_samples must be >= 1e4")
    freq = model.mod_freqs[freq_index]
    to_depth = model.phase_to_depth(freq_index)
    wrap = model.wrap_range(freq_index)
    phi0 = depth / to_depth
    gamma = spec.sigma / amplitude if spec.sigma > 0 else 0.0
    if half_width is None:
        half_width = 4.0 * depth_noise_std(max(gamma, 1e-3), freq, model.light_speed)
    edges = np.linspace(-half_width, half_width, n_bins + 1)

    counts = np.zeros(n_bins, dtype=np.int64)
    sizes = np.full(n_streams, n_samples // n_streams)
    sizes[: n_samples % n_streams] += 1
    for k, n in enumerate(sizes):
        d = _draw_depths(amplitude, spec.sigma, phi0, int(n), substream(spec.seed, k),
                               model, freq_index)
        err = np.mod(d - depth + 0.5 * wrap, wrap) - 0.5 * wrap
        counts += np.histogram(err, bins=edges)[0]
    return DepthNoiseHistogram(edges, counts, n_samples, gamma, freq)


def bin_probabilities(pdf, edges, gamma, freq, light_speed: float = LIGHT_SPEED, sub: int = 32):
    """Model probability per depth-error bin (composite Simpson within each bin).

    Negative density values (the approximate form beyond a quarter period) count
    as zero.
    """
    jac = phase_jacobian(freq, light_speed)
    probs = np.empty(len(edges) - 1)
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        x = np.linspace(a, b, 2 * sub + 1)
        y = np.clip(pdf(x, gamma, freq, light_speed), 0.0, None)
        h = (b - a) / (2 * sub)
        probs[k] = h / 3.0 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum()) * jac
    return probs


def tv_distance(hist: DepthNoiseHistogram, pdf, light_speed: float = LIGHT_SPEED) -> float:
    """Total-variation distance between histogram and model bin masses."""
    q = bin_probabilities(pdf, hist.edges, hist.gamma, hist.freq, light_speed)
    return 0.5 * float(np.abs(hist.probabilities - q).sum())


def estimate_sigma(raw: RawFrame) -> float:
    """Robust I/Q noise level from 2-D second differences of z = i + j q.

    Smooth image content cancels in the second difference. For iid noise,
    |d2 z|^2 is exponential with mean 12 sigma^2, so its median is
    12 ln(2) sigma^2. Only |d2 z| enters, which makes the estimate invariant to a
    global phase rotation (a depth offset).
    """
    z = raw.i + 1j * raw.q
    vals = [np.abs(np.diff(z, n=2, axis=axis)).ravel() ** 2
            for axis in (0, 1) if z.shape[axis] >= 3]
    if not vals:
        return 0.0
    return float(np.sqrt(np.median(np.concatenate(vals)) / (12.0 * np.log(2.0))))
