import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tofgraph.imaging import DepthFrame, StructureError
from tofgraph.metrics import (MetricError, absrel, bilinear_sample, delta1, evaluate, mae, tepe,
                              xt_slice)
from tofgraph.scene import (CameraPath, Correspondence, Plane, Scene, Sphere, render_correspondence,
                            render_depth)


def df(d, valid=None):
    d = np.asarray(d, dtype=float)
    return DepthFrame(d, np.ones_like(d), valid)


@pytest.fixture
def gt(rng):
    return df(1.0 + rng.random((20, 30)))


def identity_corr(shape, dt=1):
    v, u = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    return Correspondence(np.stack([u, v], axis=-1), np.zeros(shape, bool), np.zeros(shape), dt)


def test_mae_examples(gt):
    assert mae(gt, gt) == 0.0
    assert mae(df(gt.depth + 0.01), gt) == pytest.approx(0.01)
    d = gt.depth.copy()
    d[:10] += 0.02
    assert mae(df(d), gt) == pytest.approx(0.01)


def test_mae_uses_valid_intersection(gt):
    valid = np.ones(gt.shape, bool)
    valid[:, :15] = False
    d = gt.depth.copy()
    d[:, :15] += 100.0
    assert mae(df(d, valid), gt) == 0.0


def test_absrel_delta1_examples(gt):
    assert absrel(gt, gt) == 0.0 and delta1(gt, gt) == 1.0
    p = df(1.3 * gt.depth)
    assert delta1(p, gt) == 0.0
    assert absrel(p, gt) == pytest.approx(0.3)
    d = gt.depth.copy()
    d[:10] *= 1.2
    d[10:] *= 2.0
    assert delta1(df(d), gt) == 0.5


def test_delta1_swap_symmetric(rng, gt):
    p = df(gt.depth * rng.uniform(0.7, 1.4, gt.shape))
    assert delta1(p, gt) == delta1(gt, p)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    g = 1 + r.random(60)
    p = g * r.uniform(0.6, 1.5, 60)
    perm = r.permutation(60)
    for f in (mae, absrel, delta1):
        a = f(df(p.reshape(6, 10)), df(g.reshape(6, 10)))
        b = f(df(p[perm].reshape(6, 10)), df(g[perm].reshape(6, 10)))
        assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_metric_errors(gt):
    with pytest.raises(MetricError):
        mae(df(gt.depth, np.zeros(gt.shape, bool)), gt)
    bad = df(np.zeros(gt.shape))
    with pytest.raises(MetricError):
        absrel(gt, bad)
    with pytest.raises(MetricError):
        delta1(gt, bad)
    with pytest.raises(StructureError):
        mae(df(np.ones((2, 2))), gt)


def test_tepe_zero_and_bias(rng):
    seq = [df(1 + rng.random((15, 20))) for _ in range(4)]
    corr = [None] + [identity_corr((15, 20)) for _ in range(3)]
    assert tepe(seq, seq, corr) == 0.0
    biased = [df(f.depth + 0.37) for f in seq]
    assert tepe(biased, seq, corr) == pytest.approx(0.0, abs=1e-14)


def test_tepe_noise_folded_normal(rng):
    s, shape = 0.01, (250, 400)
    g = df(np.full(shape, 1.5))
    gts = [g, g]
    preds = [df(g.depth + s * rng.standard_normal(shape)) for _ in range(2)]
    corr = [None, identity_corr(shape)]
    assert tepe(preds, gts, corr) == pytest.approx(2 * s / np.sqrt(np.pi), rel=0.05)


def test_tepe_bilinear_warp():
    # depth ramp moving half a pixel: the warped read must interpolate
    v, u = np.mgrid[0:6, 0:8].astype(float)
    g0 = df(1 + 0.1 * u)
    g1 = df(1 + 0.1 * (u + 0.5))
    c = Correspondence(np.stack([u + 0.5, v], -1), u + 0.5 > 7, np.zeros((6, 8)), 1)
    assert tepe([g0, g0], [g0, g1], [None, c]) == pytest.approx(0.05, rel=1e-12)


def test_tepe_missing_correspondence(rng):
    seq = [df(1 + rng.random((4, 4))) for _ in range(3)]
    with pytest.raises(MetricError):
        tepe(seq, seq, [None, None, None])


def test_tepe_all_occluded(rng):
    seq = [df(1 + rng.random((4, 4))) for _ in range(2)]
    c = identity_corr((4, 4))
    c.occluded[:] = True
    with pytest.raises(MetricError):
        tepe(seq, seq, [None, c])


def test_bilinear_sample_exact_on_affine(rng):
    v, u = np.mgrid[0:7, 0:9].astype(float)
    img = 0.3 * u - 0.7 * v + 2
    pts = np.stack([rng.uniform(0, 8, 50), rng.uniform(0, 6, 50)], -1)
    assert np.allclose(bilinear_sample(img, pts), 0.3 * pts[:, 0] - 0.7 * pts[:, 1] + 2)


def test_xt_static_and_single(gt):
    s = xt_slice([gt] * 5, 7)
    assert s.shape == (5, 30) and np.all(s == s[0])
    assert np.array_equal(xt_slice([gt], 3), gt.depth[3:4])
    with pytest.raises(IndexError):
        xt_slice([gt], 20)


def test_xt_pan_constant_slope():
    # wall at 2 m studded with small bumps; the camera pans sideways at constant speed
    bumps = [Sphere(center=(x, 0.0, 2.0), radius=0.06) for x in np.arange(-1.2, 1.21, 0.17)]
    scene = Scene([Plane(point=(0, 0, 2.0), normal=(0, 0, -1))] + bumps)
    poses = [(np.eye(3), np.array([0.012 * t, 0, 0])) for t in range(10)]
    path = CameraPath(160, 21, 80.0, poses)
    sl = xt_slice([render_depth(scene, path, t) for t in range(10)], 10)

    def shift(a, b):
        a, b = a - a.mean(), b - b.mean()
        c = np.correlate(b, a, "full")
        k = int(np.argmax(c))
        y0, y1, y2 = c[k - 1], c[k], c[k + 1]
        return k - (len(a) - 1) + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)

    drift = np.array([shift(sl[0], sl[t]) for t in range(10)])
    slope, icpt = np.polyfit(np.arange(10), drift, 1)
    assert slope == pytest.approx(-80.0 * 0.012 / 2.0, rel=0.1)
    assert np.max(np.abs(drift - (slope * np.arange(10) + icpt))) < 0.15
    # ground truth: content moved left, so each pixel was seen further right before
    c = render_correspondence(scene, path, 1, 1)
    assert np.nanmedian(c.flow[..., 0]) == pytest.approx(80.0 * 0.012 / 2.0, rel=0.05)


def test_evaluate_report(gt, rng):
    preds = [df(gt.depth + 0.01), df(gt.depth + 0.01)]
    rep = evaluate(preds, [gt, gt], [None, identity_corr(gt.shape)])
    assert rep.mae == pytest.approx([0.01, 0.01])
    assert rep.valid_pixels == [600, 600]
    assert rep.mean["tepe"] == pytest.approx(0.0, abs=1e-14)
    assert set(rep.to_dict()) == {"mae", "absrel", "delta1", "valid_pixels", "tepe", "mean"}
    assert evaluate(preds, [gt, gt]).tepe is None
