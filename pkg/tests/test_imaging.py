import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tofgraph.imaging import (LIGHT_SPEED, DepthFrame, RawFrame, SensorModel, StructureError,
                              correlate, depth_to_raw, extract_iq, frames_to_depth, raw2d,
                              roundtrip_residual, unwrap_dual_freq, wrapped_phase)

M = SensorModel()
F0 = M.mod_freqs[0]


def px(v):
    return np.full((1, 1), float(v))


def test_correlate_hand_values():
    c = correlate(px(0.0), 2.0, 0.0, M).samples[:, 0, 0]
    assert c[0] == pytest.approx(1.0, abs=1e-15)
    assert c[1] == pytest.approx(0.0, abs=1e-15)
    d = LIGHT_SPEED / (16 * F0)
    c = correlate(px(d), 2.0, 0.5, M).samples[:, 0, 0]
    assert c[0] == pytest.approx(np.cos(np.pi / 4) + 0.5, abs=1e-12)


def test_correlate_rejects_bad_rasters():
    with pytest.raises(StructureError):
        correlate(np.zeros((2, 3)), np.ones((3, 2)), 0.0, M)
    with pytest.raises(ValueError):
        correlate(np.zeros((2, 2)), -1.0, 0.0, M)


def test_extract_iq_hand_values():
    raw = extract_iq(correlate(px(0.0), 2.0, 0.0, M), M)
    assert (raw.i[0, 0], raw.q[0, 0]) == pytest.approx((2.0, 0.0), abs=1e-15)
    raw = extract_iq(correlate(px(0.0), 0.0, 3.7, M), M)
    assert (raw.i[0, 0], raw.q[0, 0]) == (0.0, 0.0)
    quarter = M.phase_to_depth(0) * np.pi / 2
    raw = extract_iq(correlate(px(quarter), 2.0, 0.0, M), M)
    assert raw.i[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert raw.q[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_extract_iq_offset_count_mismatch():
    corr = correlate(px(1.0), 1.0, 0.0, M)
    three = SensorModel(phase_offsets=(0.0, 2 * np.pi / 3, 4 * np.pi / 3))
    with pytest.raises(StructureError):
        extract_iq(corr, three)


def test_raw2d_hand_values():
    d = raw2d(RawFrame(px(1.0), px(0.0)), M)
    assert d.depth[0, 0] == 0.0 and d.amplitude[0, 0] == 1.0 and d.valid[0, 0]
    d = raw2d(RawFrame(px(1.0), px(1.0)), M)
    assert d.depth[0, 0] == pytest.approx(LIGHT_SPEED / (16 * F0), abs=1e-12)
    assert d.depth[0, 0] == pytest.approx(0.9369, abs=1e-4)
    assert d.amplitude[0, 0] == pytest.approx(np.sqrt(2))
    assert not raw2d(RawFrame(px(0.0), px(0.0)), M).valid[0, 0]


def test_wrapped_phase_range_and_seam():
    phi = wrapped_phase(np.array([1.0, -1.0, 1.0]), np.array([-1e-17, 0.0, -1.0]))
    assert np.all((phi >= 0) & (phi < 2 * np.pi))
    assert phi[0] == 0.0
    assert phi[1] == pytest.approx(np.pi)
    assert phi[2] == pytest.approx(1.75 * np.pi)


def test_raw_frame_validation():
    with pytest.raises(StructureError):
        RawFrame(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        RawFrame(np.full((2, 2), np.nan), np.zeros((2, 2)))


def test_sensor_model_validation():
    with pytest.raises(ValueError):
        SensorModel(mod_freqs=(-1.0,))
    with pytest.raises(ValueError):
        SensorModel(mod_freqs=(1e6, 2e6, 3e6))
    with pytest.raises(ValueError):
        SensorModel(phase_offsets=(0.0, np.pi, 2 * np.pi))  # only two distinct offsets
    with pytest.raises(ValueError):
        SensorModel(amplitude_floor=0.0)
    assert SensorModel.from_dict(M.to_dict()) == M


@pytest.mark.parametrize("frac", [0.0, 0.3, 0.999])
def test_roundtrip_in_range(frac):
    d = np.full((8, 10), frac * M.wrap_range(0))
    assert roundtrip_residual(DepthFrame(d, np.ones_like(d)), M) < 1e-9


def test_roundtrip_beyond_range_wraps():
    dmax = M.wrap_range(0)
    d = np.full((2, 2), 1.5 * dmax)
    out = raw2d(depth_to_raw(d, 1.0, 0.0, M), M)
    assert np.allclose(out.depth, 0.5 * dmax, atol=1e-9)
    # the residual is the full wrap: the reconstructed depth sits one period lower
    assert roundtrip_residual(DepthFrame(d, np.ones_like(d)), M) == pytest.approx(dmax, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.sampled_from([0, 1]))
def test_roundtrip_property(seed, k):
    r = np.random.default_rng(seed)
    d = r.uniform(0, M.wrap_range(k) * (1 - 1e-9), (6, 7))
    a = r.uniform(0.05, 3.0, (6, 7))
    assert roundtrip_residual(DepthFrame(d, a), M, k, beta=r.uniform(0, 2)) < 1e-9


def test_ambient_rejection(rng):
    d = rng.uniform(0, 7, (5, 6))
    a = rng.uniform(0.1, 2, (5, 6))
    r0 = depth_to_raw(d, a, 0.0, M)
    r1 = depth_to_raw(d, a, rng.uniform(0, 5, (5, 6)), M)
    assert np.allclose(r1.i, r0.i, rtol=1e-12, atol=1e-12 * np.abs(r0.i).max())
    assert np.allclose(r1.q, r0.q, rtol=1e-12, atol=1e-12 * np.abs(r0.q).max())


def test_amplitude_gain(rng):
    alpha = rng.uniform(0.1, 3, (4, 4))
    out = raw2d(depth_to_raw(rng.uniform(0, 7, (4, 4)), alpha, 0.3, M), M)
    # I/Q magnitude is gain * alpha / 2 = alpha for four taps
    assert M.gain == 2.0
    assert np.allclose(out.amplitude, M.gain * alpha / 2, rtol=1e-9)


def test_phase_monotone():
    phi = np.linspace(0, 2 * np.pi, 2001)[:-1]
    d = raw2d(RawFrame(np.cos(phi)[None], np.sin(phi)[None]), M).depth[0]
    assert np.all(np.diff(d) > 0)


def test_unwrap_consistent_pair():
    one = DepthFrame(np.ones((2, 2)), np.ones((2, 2)))
    out, k = unwrap_dual_freq(one, one, M, return_wraps=True)
    assert np.allclose(out.depth, 1.0) and np.all(k == 0) and out.valid.all()


def test_unwrap_four_meters():
    d = np.full((1, 1), 4.0)
    lo = raw2d(depth_to_raw(d, 1.0, 0.0, M, 0), M)
    hi = raw2d(depth_to_raw(d, 1.0, 0.0, M, 1), M)
    assert M.wrap_range(1) == pytest.approx(2.498, abs=1e-3)
    assert hi.depth[0, 0] == pytest.approx(4.0 - M.wrap_range(1))
    out, k = unwrap_dual_freq(lo, hi, M, return_wraps=True)
    assert k[0, 0] == 1
    assert out.depth[0, 0] == pytest.approx(4.0, abs=1e-9)


def test_unwrap_inconsistent_pair_invalid():
    w_hi = M.wrap_range(1)
    lo = DepthFrame(np.full((1, 1), 1.0 + 0.6 * w_hi), np.ones((1, 1)))
    hi = DepthFrame(np.full((1, 1), 1.0), np.ones((1, 1)))
    out = unwrap_dual_freq(lo, hi, M, max_residual=0.05)
    assert not out.valid[0, 0]


def test_unwrap_shape_mismatch():
    a = DepthFrame(np.ones((2, 2)), np.ones((2, 2)))
    b = DepthFrame(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(StructureError):
        unwrap_dual_freq(a, b, M)


def test_frames_to_depth_counts():
    raw = depth_to_raw(np.ones((2, 2)), 1.0, 0.0, M, 0)
    with pytest.raises(StructureError):
        frames_to_depth((raw,), M)
    single = SensorModel(mod_freqs=(20e6,))
    assert np.allclose(frames_to_depth((raw,), single).depth, 1.0)
