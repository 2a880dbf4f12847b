import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import naive_reward

from lanekeep.reward import RewardParams, Termination, r_center, r_lane, r_lidar, r_speed, total_reward

P = RewardParams()


def test_table_defaults():
    # weights, distances and bonus values as published
    assert (P.w_lane, P.w_lidar, P.w_speed, P.w_center) == (0.3, 0.3, 0.2, 0.2)
    assert (P.d_lane, P.d_clip, P.d_reset, P.k, P.v_target) == (100, 80, 85, 2.5, 20.0)
    assert (P.d_mid, P.d_low, P.d_crit, P.d_fail) == (8, 4, 2.8, 2)
    assert (P.b1, P.b2, P.b3, P.r_bonus, P.r_clip, P.r_fail) == (5, 10, 2, 5, 1, 3)
    assert P.bonus_ranges == ((3.0, 4.0), (8.0, 10.0))
    assert P.d_range == 4.0


def test_r_lane_examples():
    assert (r_lane(0), r_lane(100), r_lane(50), r_lane(-50)) == (1.0, 0.0, 0.5, 0.5)


@pytest.mark.parametrize("d, expect", [
    (6.0, -2.5), (2.0, -6.0), (9.0, 5.0), (3.0, 5.0),
    # every branch boundary
    (2.8, 0.0), (4.0, -5.0), (8.0, 0.0), (10.0, 5.0), (2.79, -10 + 2 * 2.79),
    (3.5, 5.0), (10.01, 0.0), (2.9, 0.0), (50.0, 0.0),
])
def test_r_lidar_branches(d, expect):
    assert r_lidar(d) == pytest.approx(expect, abs=1e-12)


def test_r_speed_examples():
    assert (r_speed(20), r_speed(0), r_speed(30)) == (0.0, -1.0, -0.25)


def test_r_center_examples():
    assert r_center(0) == 0.0
    assert r_center(80) == -2.5
    assert r_center(40) == pytest.approx(-0.625)


def test_total_reward_examples():
    b = total_reward(0.0, 9.0, 20.0)
    assert b.shaped == pytest.approx(1.8) and b.reward == 1.0 and not b.terminated
    b = total_reward(90.0, 9.0, 20.0)
    assert b.terminated and b.reward == -3.0 and b.termination_cause is Termination.OFF_ROAD
    b = total_reward(0.0, 1.9, 20.0)
    assert b.terminated and b.reward == -3.0 and b.termination_cause is Termination.OBSTACLE


def test_max_steps_truncates_without_penalty():
    b = total_reward(0.0, 50.0, 20.0, step_count=1000, max_steps=1000)
    assert b.terminated and b.termination_cause is Termination.MAX_STEPS and b.reward > 0


def test_consecutive_violation_counter():
    p = RewardParams(n_violations=3)
    assert not total_reward(0.0, 1.5, 20.0, p=p, violations=2).terminated
    assert total_reward(0.0, 1.5, 20.0, p=p, violations=3).terminated


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        RewardParams(d_reset=120)
    with pytest.raises(ValueError):
        RewardParams(d_crit=5.0)
    with pytest.raises(ValueError):
        RewardParams(w_lane=-0.1)


@given(st.floats(-85, 85), st.floats(2.0, 60.0), st.floats(0, 60))
def test_clip_bound_and_mirror_invariance(dx, d, v):
    a, b = total_reward(dx, d, v), total_reward(-dx, d, v)
    assert not a.terminated
    assert abs(a.reward) <= 1.0
    assert a == b


@given(st.floats(0.01, 1e3))
def test_r_lidar_bounded(d):
    assert -10.0 <= r_lidar(d) <= 5.0


def test_matches_naive_oracle(rng):
    dx = rng.uniform(-120, 120, 20_000)
    d = rng.uniform(0.5, 14, 20_000)
    v = rng.uniform(0, 45, 20_000)
    for x, y, z in zip(dx, d, v):
        assert abs(total_reward(x, y, z).reward - naive_reward(x, y, z)) <= 1e-12
