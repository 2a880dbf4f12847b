"""Kinematic bicycle plant and episode reset."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from lanekeep.sim.track import TrackSpec, wrap_angle


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.5
    max_steering_angle: float = 0.5  # rad
    speed_lag: float = 0.5  # first-order time constant, s
    dt: float = 0.05
    v_max_kmh: float = 40.0
    start_s: float = 5.0
    start_jitter: float = 0.5  # m, uniform half-width of the initial lateral offset
    start_speed_kmh: float = 20.0

    @property
    def v_max(self) -> float:
        return self.v_max_kmh / 3.6


@dataclass(frozen=True)
class VehicleState:
    """Ego pose in world coordinates (x forward on the first segment, y left).

    ``lateral_offset`` and ``heading_error`` both use + = right of the lane,
    so a positive heading error makes the offset grow.
    """

    x: float
    y: float
    heading: float
    speed: float  # m/s
    lateral_offset: float = 0.0
    heading_error: float = 0.0
    progress: float = 0.0  # arc length of the nearest centerline point
    step_index: int = 0
    elapsed: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def speed_kmh(self) -> float:
        return self.speed * 3.6

    def mirrored(self) -> "VehicleState":
        return replace(
            self,
            y=-self.y,
            heading=-self.heading,
            lateral_offset=-self.lateral_offset,
            heading_error=-self.heading_error,
        )


def locate(track: TrackSpec, x: float, y: float, heading: float) -> tuple[float, float, float]:
    """(lateral_offset, heading_error, progress) of a pose against the centerline."""
    proj = track.project(np.array([[x, y]]))
    tangent = float(proj.tangent[0])
    return float(proj.lateral[0]), wrap_angle(tangent - heading), float(proj.s[0])


def step_dynamics(
    state: VehicleState,
    steering: float,
    target_speed: float,
    dt: float,
    track: TrackSpec,
    params: VehicleParams = VehicleParams(),
) -> VehicleState:
    """Advance one step. ``steering`` > 0 turns right; speeds in m/s."""
    if not (math.isfinite(steering) and math.isfinite(target_speed) and math.isfinite(dt)):
        raise ValueError("non-finite dynamics input")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if abs(steering) > params.max_steering_angle:
        raise ValueError(f"|steering| {steering} exceeds {params.max_steering_angle}")
    if target_speed < 0:
        raise ValueError("target speed must be non-negative")

    speed = state.speed + (target_speed - state.speed) * (dt / params.speed_lag)
    speed = max(speed, 0.0)
    # semi-implicit Euler: heading first, then position along the new heading
    heading = wrap_angle(state.heading - speed / params.wheelbase * math.tan(steering) * dt)
    x = state.x + speed * math.cos(heading) * dt
    y = state.y + speed * math.sin(heading) * dt
    offset, herr, s = locate(track, x, y, heading)
    return VehicleState(
        x=x,
        y=y,
        heading=heading,
        speed=speed,
        lateral_offset=offset,
        heading_error=herr,
        progress=s,
        step_index=state.step_index + 1,
        elapsed=state.elapsed + dt,
    )


def spawn(track: TrackSpec, offset: float, params: VehicleParams = VehicleParams()) -> VehicleState:
    """Vehicle aligned with the centerline at ``start_s``, shifted ``offset`` m to the right."""
    cx, cy, h = track.pose_at(params.start_s)
    x = cx + offset * math.sin(h)
    y = cy - offset * math.cos(h)
    lat, herr, s = locate(track, x, y, h)
    return VehicleState(x, y, h, params.start_speed_kmh / 3.6, lat, herr, s)


def reset_episode(
    track_pool: Sequence[TrackSpec],
    episode_index: int,
    seed: int = 0,
    params: VehicleParams = VehicleParams(),
) -> tuple[VehicleState, TrackSpec]:
    """Cyclic track choice with seeded lateral jitter of the start pose."""
    if not track_pool:
        raise ValueError("track pool is empty")
    track = track_pool[episode_index % len(track_pool)]
    rng = np.random.default_rng([seed, episode_index])
    offset = float(rng.uniform(-params.start_jitter, params.start_jitter))
    return spawn(track, offset, params), track
