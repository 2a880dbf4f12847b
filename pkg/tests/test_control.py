import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanekeep.control import PidGains, PidState, map_action, pid_reset, pid_step

errors = st.lists(st.floats(-5.0, 5.0, allow_nan=False), min_size=1, max_size=60)


def run(errs, gains):
    s, out, ints = pid_reset(gains), [], []
    for e in errs:
        s, u = pid_step(s, e, gains)
        out.append(u)
        ints.append(s.integral)
    return out, ints


def test_zero_error_gives_zero_output():
    g = PidGains()
    assert run([0.0] * 500, g)[0] == [0.0] * 500


def test_hand_recursion_saturates():
    g = PidGains(kp=0.5, ki=0.1, kd=0.2, dt=0.1, u_max=1.0, i_max=1.0)
    s, u = pid_step(pid_reset(g), 1.0, g)
    assert s.integral == pytest.approx(0.1)
    raw = 0.5 * 1.0 + 0.1 * 0.1 + 0.2 * (1.0 - 0.0) / 0.1
    assert raw == pytest.approx(2.51)
    assert u == 1.0 and s.last_output == 1.0 and s.prev_error == 1.0


def test_second_step_unsaturated_by_hand():
    g = PidGains(kp=0.5, ki=0.1, kd=0.2, dt=0.1, u_max=10.0, i_max=1.0)
    s, _ = pid_step(pid_reset(g), 1.0, g)
    s, u = pid_step(s, 0.5, g)
    assert s.integral == pytest.approx(0.15)
    assert u == pytest.approx(0.5 * 0.5 + 0.1 * 0.15 + 0.2 * (0.5 - 1.0) / 0.1)


def test_constant_error_integral_saturates_exactly():
    g = PidGains(kp=0.5, ki=0.1, kd=0.2, dt=0.1, u_max=1.0, i_max=1.0)
    _, ints = run([1.0] * 10_000, g)
    assert max(ints) == 1.0 and ints[-1] == 1.0


@given(errors, st.floats(0.1, 3.0), st.floats(0.1, 2.0))
def test_anti_windup_bounds(errs, i_max, u_max):
    g = PidGains(kp=1.3, ki=0.7, kd=0.4, i_max=i_max, u_max=u_max)
    out, ints = run(errs, g)
    assert all(abs(u) <= u_max for u in out)
    assert all(abs(i) <= i_max for i in ints)


@given(errors)
def test_sign_symmetry_exact(errs):
    g = PidGains()
    a, _ = run(errs, g)
    b, _ = run([-e for e in errs], g)
    assert b == [-u for u in a]


@given(st.lists(st.floats(-0.01, 0.01, allow_nan=False), min_size=1, max_size=30), st.floats(-3.0, 3.0))
def test_linear_below_saturation(errs, c):
    g = PidGains(u_max=100.0, i_max=100.0)
    a, _ = run(errs, g)
    b, _ = run([c * e for e in errs], g)
    assert np.allclose(b, c * np.array(a), atol=1e-12)


def test_reset_behaviour():
    g = PidGains()
    assert pid_reset(g) == pid_reset(g) == PidState(0.0, 0.0, 0.0)
    s, u = pid_step(pid_reset(g), 0.0, g)
    assert u == 0.0
    # the first derivative term uses a previous error of zero
    _, u = pid_step(pid_reset(g), 0.01, g)
    assert u == pytest.approx(g.kp * 0.01 + g.ki * 0.01 * g.dt + g.kd * 0.01 / g.dt)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        pid_step(pid_reset(), float("inf"), PidGains())
    with pytest.raises(ValueError):
        PidGains(i_max=0.0)
    with pytest.raises(ValueError):
        PidGains(kp=float("nan"))


def test_map_action_examples():
    v_max = 40 / 3.6
    assert map_action((0.3, -1.0), 0.5, v_max).target_speed_cmd == 0.0  # full stop
    assert map_action((0.3, 1.0), 0.5, v_max).target_speed_cmd == v_max
    c = map_action((0.0, 0.0), 0.5, v_max)
    assert c.steering_cmd == 0.0 and c.target_speed_cmd == pytest.approx(v_max / 2)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_map_action_invariants(a1, a2):
    c = map_action((a1, a2), 0.5, 10.0)
    assert -1 <= c.a1 <= 1 and -1 <= c.a2 <= 1
    assert c.steering_cmd == c.a1 * 0.5
    assert c.target_speed_cmd == (c.a2 + 1) / 2 * 10.0
    assert math.copysign(1, c.steering_cmd) == math.copysign(1, a1) or a1 == 0
