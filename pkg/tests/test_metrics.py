import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from blurvfi.errors import InputError
from blurvfi.metrics import (PSNR_CAP, HornSchunck, MetricReport, combine_flows, differential_flow,
                             evaluate, motion_smoothness, psnr, read_flow, read_frames_csv,
                             smoothness_histogram, ssim, write_flow)


def psnr_loop(a, b):
    total, n = 0.0, 0
    for x, y in zip(a.reshape(-1).tolist(), b.reshape(-1).tolist()):
        total += (x - y) ** 2
        n += 1
    return 10 * math.log10(1.0 / (total / n))


def test_psnr_cases():
    a = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.1)) == pytest.approx(20.0, abs=1e-12)
    b = np.random.default_rng(1).random((8, 8, 3))
    assert abs(psnr(a, b) - psnr_loop(a, b)) < 1e-9
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(InputError):
        psnr(a, b[:4])


def test_ssim_identity_and_constant_closed_form():
    a = np.random.default_rng(0).random((16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    expected = (2 * 0.16 + 1e-4) / (0.04 + 0.64 + 1e-4)
    assert round(expected, 4) == 0.4707
    got = ssim(np.full((16, 16, 3), 0.2), np.full((16, 16, 3), 0.8))
    assert got == pytest.approx(expected, abs=1e-12)


def test_ssim_matches_reference_implementation():
    rng = np.random.default_rng(3)
    a = rng.random((32, 40, 3))
    b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
    ref = structural_similarity(a, b, channel_axis=2, data_range=1.0, gaussian_weights=True,
                                sigma=1.5, use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-6)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)


def test_ssim_monotone_in_noise():
    rng = np.random.default_rng(4)
    a = rng.random((24, 24, 3))
    noise = rng.normal(size=a.shape)
    values = [ssim(a, a + s * noise) for s in (0.01, 0.05, 0.1, 0.3)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_ssim_rejects_small_frame():
    with pytest.raises(InputError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def smooth_image(h=48, w=48, shift=0.0):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xx = xx - shift
    g = 0.5 + 0.25 * np.sin(xx / 5.0) * np.cos(yy / 7.0) + 0.1 * np.sin((xx + yy) / 9.0)
    return np.repeat(g[..., None], 3, axis=2)


def test_flow_zero_for_identical_frames():
    a = smooth_image()
    assert np.abs(HornSchunck()(a, a)).max() < 1e-6


def test_flow_recovers_one_pixel_shift():
    flow = HornSchunck()(smooth_image(), smooth_image(shift=1.0))
    interior = flow[8:-8, 8:-8].reshape(-1, 2).mean(axis=0)
    assert abs(interior[0] - 1.0) < 0.25 and abs(interior[1]) < 0.25


def test_flow_symmetry():
    a, b = smooth_image(), smooth_image(shift=0.7)
    est = HornSchunck()
    fwd, bwd = est(a, b), est(b, a)
    asym = np.linalg.norm((fwd + bwd)[8:-8, 8:-8], axis=-1).mean()
    assert asym < 0.2


def test_flow_rejects_non_finite():
    a = smooth_image()
    b = a.copy()
    b[0, 0, 0] = np.nan
    with pytest.raises(InputError):
        HornSchunck()(a, b)


def test_flow_file_round_trip(tmp_path):
    flow = np.random.default_rng(0).normal(size=(5, 7, 2)).astype(np.float32)
    write_flow(tmp_path / "f.f32", flow)
    assert (tmp_path / "f.f32").stat().st_size == 5 * 7 * 2 * 4
    np.testing.assert_array_equal(read_flow(tmp_path / "f.f32"), flow.astype(np.float64))


def test_differential_flow_cases():
    moving = [smooth_image(shift=s) for s in (0.0, 0.5, 1.0)]
    static = [smooth_image()] * 3
    est = HornSchunck(iterations=30)
    assert not differential_flow(moving, moving, est).any()
    assert np.abs(differential_flow(static, static, est)).max() < 1e-6
    ones = np.tile([1.0, 0.0], (4, 4, 1))
    zeros = np.zeros((4, 4, 2))
    assert not combine_flows(ones, ones, zeros, zeros).any()
    with pytest.raises(InputError):
        differential_flow(moving[:2], moving, est)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_differential_flow_antisymmetry(seed):
    f = np.random.default_rng(seed).normal(size=(4, 3, 3, 2)) * 3
    d = combine_flows(f[0], f[1], f[2], f[3])
    assert np.array_equal(combine_flows(f[2], f[3], f[0], f[1]), -d)


def test_motion_smoothness_counting():
    D = np.array([[0.5, 0.0], [0.0, 1.5], [1.5, 0.0], [0.0, -2.5]])
    assert motion_smoothness(D, 0) == pytest.approx(math.log(1 / 4))
    assert motion_smoothness(D, 1) == pytest.approx(math.log(2 / 4))
    assert motion_smoothness(D, 2) == pytest.approx(math.log(1 / 4))
    assert motion_smoothness(D, 3) is None
    zero = np.zeros((6, 6, 2))
    hist = smoothness_histogram(zero)
    assert hist.M(0) == 0.0 and all(hist.M(s) is None for s in range(1, 11))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 16), scale=st.floats(0.1, 8.0), s_max=st.integers(1, 12))
def test_histogram_partition_and_exp_sum(seed, scale, s_max):
    D = np.random.default_rng(seed).normal(size=(9, 11, 2)) * scale
    hist = smoothness_histogram(D, s_max)
    norms = [math.hypot(x, y) for x, y in D.reshape(-1, 2).tolist()]
    for s in range(s_max):
        assert hist.bins[s] == sum(1 for n in norms if s <= n < s + 1)
        m = motion_smoothness(D, s)
        assert (m is None) == (hist.M(s) is None)
    assert hist.overflow == sum(1 for n in norms if n >= s_max)
    assert sum(hist.bins.values()) + hist.overflow == hist.total == 99
    probs = [math.exp(hist.M(s)) for s in range(s_max + 1) if hist.M(s) is not None]
    assert abs(sum(probs) - 1.0) < 1e-12


def _translating(n, velocity, jitter=0.0, size=48):
    return [smooth_image(size, size, shift=k * velocity + (jitter if k % 2 else -jitter)) for k in range(n)]


def test_jitter_increases_high_bin_mass():
    est = HornSchunck()
    gt = _translating(7, 1.0)
    clean = evaluate(_translating(7, 1.0), gt, estimator=est)
    jittered = evaluate(_translating(7, 1.0, jitter=1.0), gt, estimator=est)
    assert jittered.histogram.mass_at_least(1) > clean.histogram.mass_at_least(1)


def test_evaluate_identity_and_counts():
    frames = [np.random.default_rng(k).random((16, 16, 3)) for k in range(7)]
    rep = evaluate(frames, frames, estimator=HornSchunck(iterations=10))
    agg = rep.aggregates
    assert [agg[g]["count"] for g in ("deblurring", "interpolation", "comprehensive")] == [3, 4, 7]
    assert all(agg[g]["psnr"] == PSNR_CAP for g in agg)
    assert all(agg[g]["ssim"] == pytest.approx(1.0) for g in agg)
    assert rep.num_triples == 5 and rep.histogram.M(0) == 0.0
    assert "horn-schunck" in rep.flow_estimator


def test_evaluate_group_ordering_for_bad_odd_frame():
    rng = np.random.default_rng(5)
    gt = [rng.random((16, 16, 3)) for _ in range(5)]
    pred = [g.copy() for g in gt]
    pred[2] = np.clip(pred[2] + 0.1, 0, 1)  # index 3 is an interpolated frame
    agg = evaluate(pred, gt, smoothness=False).aggregates
    assert agg["interpolation"]["psnr"] < agg["comprehensive"]["psnr"] < agg["deblurring"]["psnr"] == PSNR_CAP


def test_evaluate_precomputed_flows_and_errors():
    frames = [np.zeros((16, 16, 3))] * 4
    flows = [np.tile([1.0, 0.0], (16, 16, 1))] * 3
    rep = evaluate(frames, frames, pred_flows=flows, gt_flows=[np.zeros((16, 16, 2))] * 3)
    assert rep.flow_estimator == "precomputed" and rep.histogram.M(0) == 0.0
    with pytest.raises(InputError):
        evaluate(frames, frames[:3])
    with pytest.raises(InputError):
        evaluate(frames, frames, pred_flows=flows[:2], gt_flows=flows)


def test_frames_csv_round_trip():
    rng = np.random.default_rng(9)
    gt = [rng.random((16, 16, 3)) for _ in range(5)]
    pred = [np.clip(g + 0.05 * rng.normal(size=g.shape), 0, 1) for g in gt]
    rep = evaluate(pred, gt, smoothness=False)
    back = read_frames_csv(rep.frames_csv())
    for r, b in zip(rep.rows, back):
        assert r["index"] == b["index"] and r["kind"] == b["kind"]
        assert abs(r["psnr"] - b["psnr"]) < 1e-9 and abs(r["ssim"] - b["ssim"]) < 1e-9
    assert isinstance(rep, MetricReport) and '"aggregates"' in rep.to_json()


def test_smoothness_csv_null_bins():
    rep = evaluate([np.zeros((16, 16, 3))] * 3, [np.zeros((16, 16, 3))] * 3,
                   estimator=HornSchunck(iterations=5))
    lines = rep.smoothness_csv().splitlines()
    assert lines[0] == "s,count,M"
    assert lines[1] == "0,256,0.0"
    assert lines[2] == "1,0,"
    assert lines[-1] == ">=10,0,"
