import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpcrecon.errors import ConfigError
from cpcrecon.sampling import (GOLDEN_ANGLE, N_CENTRAL, SUPPORTED_ACCEL, SamplingPlan,
                               cartesian_plan, coverage_frames, fixed_lines, lines_per_frame,
                               radial_plan, radial_plan_for_accel, radial_trajectory,
                               spoke_positions)


def test_line_counts_for_142_lines():
    counts = [lines_per_frame(142, r) for r in (2, 4, 8, 16, 32, 64)]
    assert counts == [71, 36, 18, 9, 5, 3]


def test_plan_line_counts_match():
    for r, n in zip((2, 16, 64), (71, 9, 3)):
        plan = cartesian_plan(142, 6, r, seed=1)
        assert np.all(plan.lines.sum(axis=2) == n)


def test_full_sampling():
    plan = cartesian_plan(32, 5, 1)
    assert plan.lines.all()


def test_bad_acceleration():
    with pytest.raises(ConfigError):
        cartesian_plan(32, 4, 33)
    with pytest.raises(ConfigError):
        cartesian_plan(32, 4, 0.5)


@pytest.mark.parametrize("n_y", [142, 64])
@pytest.mark.parametrize("accel", [a for a in SUPPORTED_ACCEL if a > 1])
def test_centre_rules_every_frame(n_y, accel):
    plan = cartesian_plan(n_y, 20, accel, seed=3)
    c = n_y // 2
    n = lines_per_frame(n_y, accel)
    for echo in plan.lines:
        for frame in echo:
            if n > N_CENTRAL:
                assert frame[c - 8:c + 8].all()
            elif n >= 3:
                assert frame[c - 1] and frame[c + 1]
            elif n == 2:
                assert frame[c]
            assert frame.sum() == n


@pytest.mark.parametrize("accel", [2, 4, 8, 16, 32, 64])
def test_echo_masks_differ(accel):
    plan = cartesian_plan(142, 30, accel, seed=5)
    for t in range(30):
        assert not np.array_equal(plan.lines[0, t], plan.lines[1, t])


@pytest.mark.parametrize("accel", [2, 4, 8, 16, 32])
def test_echo_draws_rarely_overlap(accel):
    # echo 1 reuses an echo-0 line only when its own pool has nothing else
    # left, so overlaps stay far below the rate of independent draws
    n = lines_per_frame(142, accel)
    fixed = np.zeros(142, bool)
    fixed[fixed_lines(142, n)] = True
    k, n_cand = n - fixed.sum(), 142 - fixed.sum()
    for seed in range(4):
        plan = cartesian_plan(142, 30, accel, seed=seed)
        shared = (plan.lines[0] & plan.lines[1] & ~fixed).sum()
        drawn = (plan.lines[0] & ~fixed).sum()
        assert shared / drawn <= 0.25 * k / n_cand
        if accel >= 8:
            assert shared == 0


@pytest.mark.parametrize("n_y,accel", [(142, 2), (142, 8), (142, 16), (142, 64), (64, 8),
                                       (64, 32)])
def test_round_robin_coverage(n_y, accel):
    # the first coverage_frames frames drain each echo's pool exactly once
    w = coverage_frames(n_y, accel)
    plan = cartesian_plan(n_y, w + 3, accel, seed=7)
    for echo in plan.lines:
        assert echo[:w].any(axis=0).all()
        if w > 1:
            assert not echo[:w - 1].any(axis=0).all()


def test_coverage_frames_hand_values():
    # 142 lines at R=2: 71 per frame, 16 fixed, 55 drawn -> ceil(126 / 55)
    assert coverage_frames(142, 2) == 3
    # R=64: 3 per frame, 2 fixed, 1 drawn -> the other 140 lines one at a time
    assert coverage_frames(142, 64) == 140
    assert coverage_frames(64, 1) == 1


def test_plan_is_deterministic():
    a = cartesian_plan(64, 10, 8, seed=11)
    b = cartesian_plan(64, 10, 8, seed=11)
    c = cartesian_plan(64, 10, 8, seed=12)
    assert a.lines.tobytes() == b.lines.tobytes()
    assert a.lines.tobytes() != c.lines.tobytes()


def test_plan_dict_roundtrip():
    plan = cartesian_plan(64, 6, 8, seed=2)
    back = SamplingPlan.from_dict(plan.to_dict())
    assert np.array_equal(back.lines, plan.lines)
    rp = radial_plan(4, 5, n_y=64, samples_per_spoke=64)
    back = SamplingPlan.from_dict(rp.to_dict())
    assert np.array_equal(back.angles, rp.angles)


# ---------------------------------------------------------------- radial


def test_golden_angle_value():
    assert np.degrees(GOLDEN_ANGLE) == pytest.approx(111.246117975, abs=1e-8)


def test_first_spokes_alternate_echoes():
    plan = radial_plan(2, 2)
    deg = np.degrees(plan.angles)
    # global spokes 0..3 live in frame 0: echo 0 gets 0 and 2, echo 1 gets 1 and 3
    assert deg[0, 0, 0] == pytest.approx(0.0)
    assert deg[1, 0, 0] == pytest.approx(111.246117975)
    assert deg[0, 0, 1] == pytest.approx(222.49223595)
    assert deg[1, 0, 1] == pytest.approx(333.738353925)


@pytest.mark.parametrize("spokes", [1, 2, 3, 5, 9])
def test_consecutive_spokes_step_by_golden_angle(spokes):
    plan = radial_plan(6, spokes)
    # interleave back to the global order
    glob = np.stack([plan.angles[0], plan.angles[1]], axis=-1).reshape(-1)
    steps = np.mod(np.diff(glob), 2 * np.pi)
    np.testing.assert_allclose(steps, GOLDEN_ANGLE, atol=1e-12)


def test_accel_32_is_5_spokes_for_142():
    plan = radial_plan_for_accel(142, 4, 32)
    assert plan.per_frame == 5


@pytest.mark.parametrize("spokes", range(1, 11))
def test_no_collinear_spokes_within_frame(spokes):
    plan = radial_plan(40, spokes)
    for echo in plan.angles:
        for frame in echo:
            a = np.mod(frame, np.pi)
            d = np.abs(a[:, None] - a[None, :])
            d = np.minimum(d, np.pi - d)
            off = d[~np.eye(len(a), dtype=bool)]
            assert np.all(off > 1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 129), st.integers(1, 6))
def test_trajectory_in_range_and_dcomp_symmetric(samples, spokes):
    plan = radial_plan(2, spokes, n_y=32, samples_per_spoke=samples)
    coords, d = radial_trajectory(plan, 1, (32, 32))
    assert np.all(coords >= -0.5) and np.all(coords < 0.5)
    assert np.all(d >= 0)
    per_spoke = d.reshape(2, spokes, samples)
    np.testing.assert_allclose(per_spoke, per_spoke[..., ::-1], atol=1e-15)


def test_spoke_positions_symmetric():
    p = spoke_positions(8)
    np.testing.assert_allclose(p, -p[::-1])
    assert p.min() >= -0.5 and p.max() < 0.5


def test_dcomp_energy_matches_a_cartesian_line():
    plan = radial_plan(1, 1, n_y=32, samples_per_spoke=32)
    _, d = radial_trajectory(plan, 0, (32, 32))
    assert np.sum(d ** 2) == pytest.approx(32.0)
