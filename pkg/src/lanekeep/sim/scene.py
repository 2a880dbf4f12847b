"""Ground-truth scene classification feeding the caption generator."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from lanekeep.sim.lidar import LidarScan
from lanekeep.sim.track import TrackSpec
from lanekeep.sim.vehicle import VehicleState


class Curvature(str, Enum):
    STRAIGHT = "straight"
    GENTLE = "gentle_curve"
    SHARP = "sharp_curve"


class Direction(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    NONE = "none"


class DistanceClass(str, Enum):
    NEAR = "near"
    MID = "mid"
    FAR = "far"
    NONE = "none"


@dataclass(frozen=True)
class SceneThresholds:
    lookahead: float = 25.0  # m of centerline inspected for curvature
    gentle_curvature: float = 1.0 / 150.0  # below: straight
    sharp_curvature: float = 1.0 / 40.0  # at or above: sharp
    cone_deg: float = 30.0
    near: float = 4.0  # same bands as the LiDAR reward (d_low, d_mid)
    mid: float = 8.0


@dataclass(frozen=True)
class SceneDescriptor:
    curvature_class: Curvature
    curve_direction: Direction
    obstacle_ahead: bool
    obstacle_distance_class: DistanceClass
    lane_marking_visible: bool = True

    def __post_init__(self):
        if self.obstacle_ahead == (self.obstacle_distance_class == DistanceClass.NONE):
            raise ValueError("distance class must be none exactly when no obstacle is ahead")
        if (self.curvature_class == Curvature.STRAIGHT) != (self.curve_direction == Direction.NONE):
            raise ValueError("only curves carry a direction")

    def mirrored(self) -> "SceneDescriptor":
        flip = {Direction.LEFT: Direction.RIGHT, Direction.RIGHT: Direction.LEFT, Direction.NONE: Direction.NONE}
        return replace(self, curve_direction=flip[self.curve_direction])


def classify_curvature(kappa: float, th: SceneThresholds = SceneThresholds()) -> tuple[Curvature, Direction]:
    a = abs(kappa)
    if a < th.gentle_curvature:
        return Curvature.STRAIGHT, Direction.NONE
    cls = Curvature.SHARP if a >= th.sharp_curvature else Curvature.GENTLE
    return cls, Direction.LEFT if kappa > 0 else Direction.RIGHT


def distance_class(d: float, th: SceneThresholds = SceneThresholds()) -> DistanceClass:
    if d < th.near:
        return DistanceClass.NEAR
    if d < th.mid:
        return DistanceClass.MID
    return DistanceClass.FAR


def describe_scene(
    state: VehicleState,
    track: TrackSpec,
    scan: LidarScan,
    th: SceneThresholds = SceneThresholds(),
) -> SceneDescriptor:
    # strongest curvature over the lookahead window, first one wins ties
    kappa = 0.0
    for k in track.segments_near(state.progress, state.progress + th.lookahead):
        c = track.segments[k].curvature
        if abs(c) > abs(kappa):
            kappa = c
    cls, direction = classify_curvature(kappa, th)

    cone = np.abs(scan.angles) <= math.radians(th.cone_deg) + 1e-12
    blocked = cone & scan.obstacle_hit & (scan.ranges < scan.max_range)
    if blocked.any():
        d = float(scan.ranges[blocked].min())
        ahead, dist = True, distance_class(d, th)
    else:
        ahead, dist = False, DistanceClass.NONE
    visible = abs(state.lateral_offset) <= track.lane_width / 2
    return SceneDescriptor(cls, direction, ahead, dist, visible)
