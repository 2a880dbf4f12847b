"""Hybrid lane-keeping reward with termination."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Termination(str, Enum):
    NONE = "none"
    OFF_ROAD = "off_road"
    OBSTACLE = "obstacle"
    MAX_STEPS = "max_steps"


@dataclass(frozen=True)
class RewardParams:
    w_lane: float = 0.3
    w_lidar: float = 0.3
    w_speed: float = 0.2
    w_center: float = 0.2
    d_lane: float = 100.0  # px
    d_clip: float = 80.0  # px
    d_reset: float = 85.0  # px
    k: float = 2.5
    v_target: float = 20.0  # km/h
    d_mid: float = 8.0  # m
    d_low: float = 4.0
    d_crit: float = 2.8
    d_fail: float = 2.0
    b1: float = 5.0
    b2: float = 10.0
    b3: float = 2.0
    r_bonus: float = 5.0
    bonus_ranges: tuple[tuple[float, float], ...] = ((3.0, 4.0), (8.0, 10.0))
    r_clip: float = 1.0
    r_fail: float = 3.0
    n_violations: int = 1  # consecutive d_min < d_fail steps before termination

    def __post_init__(self):
        if min(self.w_lane, self.w_lidar, self.w_speed, self.w_center) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.d_reset > self.d_lane:
            raise ValueError("d_reset must not exceed d_lane")
        if not self.d_crit < self.d_low < self.d_mid:
            raise ValueError("need d_crit < d_low < d_mid")
        if not self.r_clip > 0:
            raise ValueError("r_clip must be positive")
        if self.n_violations < 1:
            raise ValueError("n_violations must be >= 1")
        object.__setattr__(self, "bonus_ranges", tuple(tuple(map(float, r)) for r in self.bonus_ranges))

    @property
    def d_range(self) -> float:
        return self.d_mid - self.d_low


@dataclass(frozen=True)
class RewardBreakdown:
    r_lane: float
    r_lidar: float
    r_speed: float
    r_center: float
    shaped: float
    reward: float
    terminated: bool
    termination_cause: Termination = Termination.NONE


def r_lane(dx_px: float, p: RewardParams = RewardParams()) -> float:
    return 1.0 - abs(dx_px) / p.d_lane


def r_lidar(d_min: float, p: RewardParams = RewardParams()) -> float:
    # cases overlap (d_min = 4 is in [d_low, d_mid] and in [3, 4]); first match wins
    if p.d_low <= d_min <= p.d_mid:
        return -p.b1 * (p.d_mid - d_min) / p.d_range
    if d_min < p.d_crit:
        return -p.b2 + p.b3 * d_min
    for lo, hi in p.bonus_ranges:
        if lo <= d_min <= hi:
            return p.r_bonus
    return 0.0


def r_speed(v_kmh: float, p: RewardParams = RewardParams()) -> float:
    return -(((v_kmh - p.v_target) / p.v_target) ** 2)


def r_center(dx_px: float, p: RewardParams = RewardParams()) -> float:
    return -p.k * (abs(dx_px) / p.d_clip) ** 2


def total_reward(
    dx_px: float,
    d_min: float,
    v_kmh: float,
    step_count: int = 0,
    p: RewardParams = RewardParams(),
    violations: int | None = None,
    max_steps: int | None = None,
) -> RewardBreakdown:
    """Weighted, clipped reward; early termination bypasses the clip.

    ``violations`` is the number of consecutive steps (this one included) with
    d_min < d_fail; by default it is 1 whenever this step violates. Reaching
    ``max_steps`` truncates the episode without the failure penalty.
    """
    lane = r_lane(dx_px, p)
    lidar = r_lidar(d_min, p)
    speed = r_speed(v_kmh, p)
    center = r_center(dx_px, p)
    shaped = p.w_lane * lane + p.w_lidar * lidar + p.w_speed * speed + p.w_center * center

    if violations is None:
        violations = 1 if d_min < p.d_fail else 0
    if abs(dx_px) > p.d_reset:
        cause = Termination.OFF_ROAD
    elif d_min < p.d_fail and violations >= p.n_violations:
        cause = Termination.OBSTACLE
    else:
        cause = Termination.NONE
    if cause is not Termination.NONE:
        return RewardBreakdown(lane, lidar, speed, center, shaped, -p.r_fail, True, cause)
    clipped = min(max(shaped, -p.r_clip), p.r_clip)
    if max_steps is not None and step_count >= max_steps:
        return RewardBreakdown(lane, lidar, speed, center, shaped, clipped, True, Termination.MAX_STEPS)
    return RewardBreakdown(lane, lidar, speed, center, shaped, clipped, False, Termination.NONE)
