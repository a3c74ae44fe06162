import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpcrecon.errors import ConfigError
from cpcrecon.metrics import (PSNR_CAP, combine_magnitudes, evaluate, flow, flow_errors,
                              frame_errors, geometric_mean, psnr, velocity, zoom_region)


def phase_pair(v, venc):
    """Echo pair whose phase difference encodes velocity ``v``."""
    mag = np.ones_like(v)
    return mag.astype(complex), mag * np.exp(1j * np.pi * v / venc)


def test_hand_computed_errors():
    e2, einf, eall = flow_errors(np.array([1.0, 2.0, 1.0]), np.array([1.0, 2.0, 2.0]))
    # ||(0,0,1)|| / ||(1,2,2)|| = 1/3; 1/2; |4 - 5| / 5
    assert e2 == pytest.approx(100 / 3)
    assert einf == pytest.approx(50.0)
    assert eall == pytest.approx(20.0)


def test_identical_flows_have_zero_error():
    q = np.array([3.0, -1.0, 2.5])
    assert flow_errors(q, q) == (0.0, 0.0, 0.0)


def test_ten_percent_scaling():
    q = np.array([3.0, -1.0, 2.5, 4.0])
    np.testing.assert_allclose(flow_errors(1.1 * q, q), (10, 10, 10), rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=3, max_size=10),
       st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2**31 - 1))
def test_errors_are_scale_invariant(qref, c, seed):
    qref = np.array(qref)
    q = qref + np.random.default_rng(seed).normal(0, 0.5, qref.size)
    np.testing.assert_allclose(flow_errors(c * q, c * qref), flow_errors(q, qref), rtol=1e-9)


def test_zero_reference_flow_raises():
    with pytest.raises(ConfigError):
        flow_errors(np.ones(3), np.zeros(3))
    with pytest.raises(ConfigError):
        flow_errors(np.ones(2), np.array([1.0, -1.0]))


def test_frame_errors():
    np.testing.assert_array_equal(frame_errors([1, 4, 2], [2, 2, 2]), [1, 2, 0])


# ---------------------------------------------------------------- flow


def test_zero_velocity_gives_zero_flow():
    v = np.zeros((3, 6, 6))
    u0, u1 = phase_pair(v, 100.0)
    roi = np.zeros((6, 6), bool)
    roi[2:4, 1:5] = True
    assert np.all(flow(u0, u1, roi, 100.0).Q == 0)


def test_uniform_velocity_over_twenty_pixels():
    v0 = 37.5
    v = np.full((2, 8, 8), v0)
    u0, u1 = phase_pair(v, 150.0)
    roi = np.zeros((8, 8), bool)
    roi[1:5, 2:7] = True
    assert roi.sum() == 20
    np.testing.assert_allclose(flow(u0, u1, roi, 150.0).Q, 20 * v0, rtol=1e-12)


def test_pixel_area_scales_flow():
    rng = np.random.default_rng(0)
    v = rng.uniform(-50, 50, (3, 5, 5))
    u0, u1 = phase_pair(v, 100.0)
    roi = rng.random((5, 5)) < 0.5
    q1 = flow(u0, u1, roi, 100.0).Q
    q2 = flow(u0, u1, roi, 100.0, pixel_area=2.5).Q
    np.testing.assert_allclose(q2, 2.5 * q1, rtol=1e-12)


def test_flow_matches_loop_oracle_with_per_frame_masks():
    rng = np.random.default_rng(1)
    venc = 80.0
    u0 = rng.normal(size=(4, 6, 7)) + 1j * rng.normal(size=(4, 6, 7))
    u1 = rng.normal(size=(4, 6, 7)) + 1j * rng.normal(size=(4, 6, 7))
    roi = rng.random((4, 6, 7)) < 0.4
    q = flow(u0, u1, roi, venc, pixel_area=0.7).Q
    for t in range(4):
        vals = []
        for i in range(6):
            for j in range(7):
                if roi[t, i, j]:
                    d = math.atan2((u1[t, i, j] * u0[t, i, j].conjugate()).imag,
                                   (u1[t, i, j] * u0[t, i, j].conjugate()).real)
                    vals.append(d * venc / math.pi)
        assert q[t] == pytest.approx(len(vals) * 0.7 * sum(vals) / len(vals), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.integers(0, 2**31 - 1))
def test_flow_is_linear_in_velocity(a, b, seed):
    rng = np.random.default_rng(seed)
    venc = 100.0
    v1 = rng.uniform(-40, 40, (2, 5, 5))
    v2 = rng.uniform(-40, 40, (2, 5, 5))
    roi = np.ones((5, 5), bool)
    q = lambda v: flow(*phase_pair(v, venc), roi, venc).Q  # noqa: E731
    np.testing.assert_allclose(q(a * v1 + b * v2), a * q(v1) + b * q(v2), atol=1e-9)


def test_velocity_ignores_magnitudes():
    v = np.array([[[10.0, -20.0]]])
    u0, u1 = phase_pair(v, 50.0)
    np.testing.assert_allclose(velocity(3 * u0, 0.2 * u1, 50.0), v, rtol=1e-12)


def test_empty_roi_raises():
    u = np.ones((2, 4, 4), complex)
    with pytest.raises(ConfigError):
        flow(u, u, np.zeros((4, 4), bool), 100.0)
    roi = np.ones((2, 4, 4), bool)
    roi[1] = False
    with pytest.raises(ConfigError):
        flow(u, u, roi, 100.0)


# ---------------------------------------------------------------- PSNR / magnitudes


def psnr_loop(a, b):
    peak = 0.0
    se = 0.0
    n = 0
    for x, y in zip(np.abs(a).ravel(), np.abs(b).ravel()):
        peak = max(peak, y)
        se += (x - y) ** 2
        n += 1
    return 10 * math.log10(peak ** 2 / (se / n))


def test_psnr_one_percent_offset_is_forty_db():
    ref = np.random.default_rng(2).uniform(0.1, 1.0, (3, 8, 8))
    ref[0, 0, 0] = 1.0
    assert psnr(ref + 0.01, ref) == pytest.approx(40.0, abs=1e-9)


def test_psnr_perfect_match_is_capped():
    ref = np.random.default_rng(3).uniform(0, 1, (2, 4, 4))
    assert psnr(ref, ref) == PSNR_CAP


def test_psnr_matches_loop_oracle():
    rng = np.random.default_rng(4)
    ref = rng.normal(size=(3, 9, 9)) + 1j * rng.normal(size=(3, 9, 9))
    u = ref + 0.1 * (rng.normal(size=ref.shape) + 1j * rng.normal(size=ref.shape))
    assert psnr(u, ref) == pytest.approx(psnr_loop(u, ref), rel=1e-12)
    region = np.zeros((9, 9), bool)
    region[2:6, 3:8] = True
    sel = np.broadcast_to(region, ref.shape)
    assert psnr(u, ref, region) == pytest.approx(psnr_loop(u[sel], ref[sel]), rel=1e-12)


def test_psnr_empty_region_raises():
    with pytest.raises(ConfigError):
        psnr(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), bool))


def test_combine_magnitudes():
    rng = np.random.default_rng(5)
    u = rng.normal(size=(2, 3, 3)) + 1j * rng.normal(size=(2, 3, 3))
    np.testing.assert_allclose(combine_magnitudes(u, u * 1j), np.abs(u), rtol=1e-15)
    np.testing.assert_allclose(combine_magnitudes(u, np.zeros_like(u)), np.abs(u) / 2)
    w = rng.normal(size=(2, 3, 3)) + 1j * rng.normal(size=(2, 3, 3))
    out = combine_magnitudes(u, w)
    for idx in np.ndindex(u.shape):
        assert out[idx] == pytest.approx((abs(u[idx]) + abs(w[idx])) / 2, rel=1e-14)


def test_geometric_mean_selection_arithmetic():
    assert geometric_mean([4, 9]) == pytest.approx(6.0)
    assert geometric_mean([2, 0]) == 0.0


def test_zoom_region_contains_roi():
    roi = np.zeros((20, 20), bool)
    roi[8:11, 5:7] = True
    box = zoom_region(roi, margin=2)
    assert box[roi].all()
    assert box.sum() == (3 + 4) * (2 + 4)
    assert zoom_region(roi, n_t=3).shape == (3, 20, 20)


def test_evaluate_reference_against_itself():
    rng = np.random.default_rng(6)
    v = rng.uniform(10, 30, (4, 6, 6))
    u0, u1 = phase_pair(v, 100.0)
    roi = np.zeros((6, 6), bool)
    roi[1:4, 2:5] = True
    m = evaluate(u0, u1, u0, u1, roi, 100.0)
    assert (m["e2"], m["einf"], m["eoverall"]) == (0.0, 0.0, 0.0)
    assert m["psnr"] == PSNR_CAP
    assert m["Q"] == m["Q_ref"]
