"""PID lateral-correction feature and the action -> command mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.8
    ki: float = 0.05
    kd: float = 0.3
    i_max: float = 2.0
    u_max: float = 1.0
    dt: float = 0.05

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"gain {name} must be finite")
        if not (self.i_max > 0 and self.u_max > 0 and self.dt > 0):
            raise ValueError("i_max, u_max and dt must be positive")


class PidState(NamedTuple):  # a tuple keeps the per-step update cheap
    integral: float = 0.0
    prev_error: float = 0.0
    last_output: float = 0.0


def _clip(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def pid_reset(gains: PidGains | None = None) -> PidState:
    return PidState()


def pid_step(state: PidState, error: float, gains: PidGains) -> tuple[PidState, float]:
    """One controller update with a clamped integral and a clamped output.

    The integral is clipped before it enters the output; the derivative is the
    raw backward difference.
    """
    if not math.isfinite(error):
        raise ValueError("PID error must be finite")
    integral = _clip(state.integral + error * gains.dt, -gains.i_max, gains.i_max)
    raw = gains.kp * error + gains.ki * integral + gains.kd * (error - state.prev_error) / gains.dt
    u = _clip(raw, -gains.u_max, gains.u_max)
    return PidState(integral, error, u), u


@dataclass(frozen=True)
class ActionCommand:
    a1: float
    a2: float
    steering_cmd: float  # rad, + = right
    target_speed_cmd: float  # m/s


def map_action(a: tuple[float, float], max_steering_angle: float, v_max: float) -> ActionCommand:
    a1 = _clip(float(a[0]), -1.0, 1.0)
    a2 = _clip(float(a[1]), -1.0, 1.0)
    return ActionCommand(a1, a2, a1 * max_steering_angle, (a2 + 1.0) / 2.0 * v_max)
