"""Planar LiDAR: a forward 180 degree fan cast against obstacles and road edges."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lanekeep.sim.track import TrackSpec
from lanekeep.sim.vehicle import VehicleState

_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray  # index 0 is the rightmost ray
    max_range: float
    obstacle_hit: np.ndarray  # True where the ray stopped on an obstacle
    angles: np.ndarray  # ray angles relative to the heading, CCW positive

    @property
    def d_min(self) -> float:
        return float(self.ranges.min())

    @property
    def n_rays(self) -> int:
        return len(self.ranges)


def ray_angles(n_rays: int = 180, fov: float = math.pi) -> np.ndarray:
    """Symmetric fan: (i + 0.5) / n of the field of view, right to left."""
    half = (np.arange(n_rays // 2) + 0.5) / n_rays * fov
    if n_rays % 2:
        return np.concatenate([-half[::-1], [0.0], half])
    # built from one half so that the fan is exactly odd-symmetric
    return np.concatenate([-half[::-1], half])


def _circle_hits(ox, oy, dx, dy, cx, cy, radius):
    """Both ray parameters of a ray-circle intersection (nan where missed)."""
    fx, fy = ox - cx, oy - cy
    b = fx * dx + fy * dy
    c = fx * fx + fy * fy - radius * radius
    disc = b * b - c
    ok = disc >= 0
    root = np.sqrt(np.where(ok, disc, 0.0))
    t1 = np.where(ok, -b - root, np.nan)
    t2 = np.where(ok, -b + root, np.nan)
    return t1, t2


def _first_positive(*ts):
    best = None
    for t in ts:
        t = np.where(t > 0, t, np.inf)
        t = np.where(np.isnan(t), np.inf, t)
        best = t if best is None else np.minimum(best, t)
    return best


def cast_lidar(
    state: VehicleState,
    track: TrackSpec,
    n_rays: int = 180,
    max_range: float = 12.0,
    fov: float = math.pi,
) -> LidarScan:
    rel = ray_angles(n_rays, fov)
    ang = state.heading + rel
    dx, dy = np.cos(ang), np.sin(ang)
    ox, oy = state.x, state.y

    best = np.full(n_rays, np.inf)
    obstacle = np.zeros(n_rays, dtype=bool)
    for ob in track.obstacles:
        if math.hypot(ob.x - ox, ob.y - oy) - ob.radius > max_range:
            continue
        t1, t2 = _circle_hits(ox, oy, dx, dy, ob.x, ob.y, ob.radius)
        t = _first_positive(t1, t2)
        closer = t < best
        best = np.where(closer, t, best)
        obstacle |= closer

    reach = max_range + 2.0 * track.road_half_width + 5.0
    edges = np.full(n_rays, np.inf)
    for k in track.segments_near(state.progress - reach, state.progress + reach):
        edges = np.minimum(edges, _edge_hits(track, k, ox, oy, dx, dy))
    closer = edges < best
    obstacle &= ~closer
    best = np.minimum(best, edges)

    ranges = np.minimum(best, max_range)
    return LidarScan(ranges=ranges, max_range=max_range, obstacle_hit=obstacle & (best <= max_range), angles=rel)


def _edge_hits(track: TrackSpec, k: int, ox, oy, dx, dy):
    """Nearest positive hit on either road edge of segment ``k``."""
    x0, y0, h0, _ = track.segment_start(k)
    seg = track.segments[k]
    half = track.road_half_width
    tx, ty = math.cos(h0), math.sin(h0)
    nx, ny = -ty, tx
    if seg.kind == "line":
        out = []
        for side in (1.0, -1.0):
            px, py = x0 + side * half * nx, y0 + side * half * ny
            # solve o + t d = p + u tangent
            den = dx * ty - dy * tx
            safe = np.where(den == 0, 1.0, den)
            rx, ry = px - ox, py - oy
            t = (rx * ty - ry * tx) / safe
            u = (rx * dy - ry * dx) / safe
            hit = (den != 0) & (u >= -_EDGE_TOL) & (u <= seg.length + _EDGE_TOL)
            out.append(np.where(hit, t, np.nan))
        return _first_positive(*out)

    kappa = seg.curvature
    sgn = 1.0 if kappa > 0 else -1.0
    radius = 1.0 / abs(kappa)
    cx, cy = x0 + nx / kappa, y0 + ny / kappa
    phi0 = math.atan2(y0 - cy, x0 - cx)
    sweep = seg.length / radius
    out = []
    # the inner edge (toward the center) has radius R - half
    for r_edge in (radius - half, radius + half):
        if r_edge <= 0:
            continue
        for t in _circle_hits(ox, oy, dx, dy, cx, cy, r_edge):
            hx, hy = ox + t * dx, oy + t * dy
            u = sgn * (np.arctan2(hy - cy, hx - cx) - phi0)
            u = np.where(u > math.pi, u - 2 * math.pi, u)
            u = np.where(u < -math.pi, u + 2 * math.pi, u)
            on_arc = (u >= -_EDGE_TOL) & (u <= sweep + _EDGE_TOL)
            out.append(np.where(on_arc, t, np.nan))
    return _first_positive(*out)
