"""Track geometry: piecewise line/arc centerlines, obstacles, and the generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TRACK_FORMAT = "lanekeep-tracks"
TRACK_FORMAT_VERSION = 1

PROFILES = ("straight", "curves", "mixed")


def wrap_angle(a):
    """Wrap into [-pi, pi] without touching values already in range.

    The branchy form is exact and odd-symmetric, which the mirror checks rely on.
    """
    if isinstance(a, np.ndarray):
        out = a.copy()
        while True:
            hi, lo = out > math.pi, out < -math.pi
            if not (hi.any() or lo.any()):
                return out
            out[hi] -= 2.0 * math.pi
            out[lo] += 2.0 * math.pi
    while a > math.pi:
        a = a - 2.0 * math.pi
    while a < -math.pi:
        a = a + 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Segment:
    kind: str  # "line" or "arc"
    length: float
    curvature: float = 0.0  # 1/m, positive turns left (counter-clockwise)

    def __post_init__(self):
        if self.kind not in ("line", "arc"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not self.length > 0:
            raise ValueError("segment length must be positive")
        if self.kind == "line" and self.curvature != 0.0:
            raise ValueError("line segments have zero curvature")
        if self.kind == "arc" and self.curvature == 0.0:
            raise ValueError("arc segments need non-zero curvature")


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass
class Projection:
    """Nearest-centerline data for a batch of query points."""

    s: np.ndarray  # arc length of the nearest point
    left: np.ndarray  # signed distance, positive to the left of travel
    tangent: np.ndarray  # tangent heading at the nearest point
    curvature: np.ndarray
    segment: np.ndarray
    foot: np.ndarray  # (N, 2) nearest centerline points

    @property
    def lateral(self) -> np.ndarray:
        """Signed offset with the + = right-of-centerline convention."""
        return -self.left


@dataclass
class TrackSpec:
    """A C1-continuous centerline starting at the origin heading along +x."""

    segments: tuple[Segment, ...]
    lane_width: float = 5.0
    road_half_width: float = 7.5  # centerline to road edge, seen by the LiDAR
    obstacles: tuple[Obstacle, ...] = ()
    seed: int = 0
    profile: str = "custom"
    _starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.segments = tuple(self.segments)
        self.obstacles = tuple(self.obstacles)
        if not self.segments:
            raise ValueError("track needs at least one segment")
        if not self.lane_width > 0:
            raise ValueError("lane_width must be positive")
        if not self.road_half_width >= self.lane_width / 2:
            raise ValueError("road edge must lie outside the lane")
        # rows: x0, y0, heading0, s0
        starts = np.zeros((len(self.segments) + 1, 4))
        x = y = h = s = 0.0
        for i, seg in enumerate(self.segments):
            starts[i] = (x, y, h, s)
            x, y, h = _advance(x, y, h, seg)
            s += seg.length
        starts[-1] = (x, y, h, s)
        self._starts = starts

    @property
    def length(self) -> float:
        return float(self._starts[-1, 3])

    def segment_start(self, k: int) -> tuple[float, float, float, float]:
        x, y, h, s = self._starts[k]
        return float(x), float(y), float(h), float(s)

    def segments_near(self, s_lo: float, s_hi: float) -> list[int]:
        s0 = self._starts[:-1, 3]
        s1 = self._starts[1:, 3]
        idx = np.nonzero((s1 >= s_lo) & (s0 <= s_hi))[0]
        return [int(i) for i in idx]

    def curvature_at(self, s: float) -> float:
        k = int(np.searchsorted(self._starts[1:-1, 3], s, side="right"))
        return self.segments[k].curvature

    def pose_at(self, s: float) -> tuple[float, float, float]:
        """Centerline point and tangent heading at arc length ``s`` (clamped)."""
        s = min(max(s, 0.0), self.length)
        k = int(np.searchsorted(self._starts[1:-1, 3], s, side="right"))
        x, y, h, s0 = self._starts[k]
        if s <= s0:
            return float(x), float(y), float(h)
        seg = self.segments[k]
        return _advance(float(x), float(y), float(h), Segment(seg.kind, s - s0, seg.curvature))

    def sample_centerline(self, spacing: float) -> np.ndarray:
        """Dense (N, 2) centerline samples, used by brute-force checks."""
        n = int(math.ceil(self.length / spacing)) + 1
        pts = np.empty((n, 2))
        for i, s in enumerate(np.linspace(0.0, self.length, n)):
            pts[i] = self.pose_at(float(s))[:2]
        return pts

    def project(self, pts: np.ndarray, candidates: Sequence[int] | None = None) -> Projection:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        ks = range(len(self.segments)) if candidates is None else candidates
        best = None
        for k in ks:
            res = self._project_segment(k, pts)
            if best is None:
                best = list(res) + [np.full(n, k)]
                continue
            better = res[0] < best[0]
            for j in range(len(res)):
                if res[j].ndim == 2:
                    best[j][better] = res[j][better]
                else:
                    best[j] = np.where(better, res[j], best[j])
            best[-1] = np.where(better, k, best[-1])
        dist, s, left, tangent, curv, foot, seg = best
        return Projection(s=s, left=left, tangent=tangent, curvature=curv, segment=seg, foot=foot)

    def _project_segment(self, k: int, pts: np.ndarray):
        x0, y0, h0, s0 = self._starts[k]
        seg = self.segments[k]
        tx, ty = math.cos(h0), math.sin(h0)
        nx, ny = -ty, tx
        dx = pts[:, 0] - x0
        dy = pts[:, 1] - y0
        if seg.kind == "line":
            along = dx * tx + dy * ty
            s_loc = np.clip(along, 0.0, seg.length)
            fx = x0 + s_loc * tx
            fy = y0 + s_loc * ty
            ex, ey = pts[:, 0] - fx, pts[:, 1] - fy
            dist = np.hypot(ex, ey)
            interior = (along >= 0.0) & (along <= seg.length)
            side = ex * nx + ey * ny
            left = np.where(interior, dx * nx + dy * ny, np.sign(side) * dist)
            tangent = np.full(len(pts), h0)
            foot = np.stack([fx, fy], axis=1)
            return dist, s0 + s_loc, left, tangent, np.zeros(len(pts)), foot
        kappa = seg.curvature
        sgn = 1.0 if kappa > 0 else -1.0
        radius = 1.0 / abs(kappa)
        cx, cy = x0 + nx / kappa, y0 + ny / kappa
        vx, vy = pts[:, 0] - cx, pts[:, 1] - cy
        r = np.hypot(vx, vy)
        phi0 = math.atan2(y0 - cy, x0 - cx)
        u = wrap_angle(sgn * (np.arctan2(vy, vx) - phi0))
        sweep = seg.length / radius
        interior = (u >= 0.0) & (u <= sweep)
        # endpoint candidates for points outside the angular span
        xe, ye, _ = _advance(x0, y0, h0, seg)
        d_start = np.hypot(dx, dy)
        d_end = np.hypot(pts[:, 0] - xe, pts[:, 1] - ye)
        use_end = d_end < d_start
        s_loc = np.where(interior, u * radius, np.where(use_end, seg.length, 0.0))
        ang = phi0 + sgn * s_loc / radius
        fx = cx + radius * np.cos(ang)
        fy = cy + radius * np.sin(ang)
        tangent = h0 + kappa * s_loc
        ex, ey = pts[:, 0] - fx, pts[:, 1] - fy
        dist_clamped = np.hypot(ex, ey)
        side = ex * (-np.sin(tangent)) + ey * np.cos(tangent)
        left = np.where(interior, sgn * (radius - r), np.sign(side) * dist_clamped)
        dist = np.where(interior, np.abs(radius - r), dist_clamped)
        foot = np.stack([fx, fy], axis=1)
        return dist, s0 + s_loc, left, wrap_angle(tangent), np.full(len(pts), kappa), foot

    def mirrored(self) -> "TrackSpec":
        """Reflection about the x axis: curvatures and obstacle y flip sign."""
        segs = tuple(Segment(s.kind, s.length, -s.curvature) for s in self.segments)
        obs = tuple(Obstacle(o.x, -o.y, o.radius) for o in self.obstacles)
        return TrackSpec(segs, self.lane_width, self.road_half_width, obs, self.seed, self.profile)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "profile": self.profile,
            "lane_width": self.lane_width,
            "road_half_width": self.road_half_width,
            "length": self.length,
            "segments": [
                {"kind": s.kind, "length": s.length, "curvature": s.curvature} for s in self.segments
            ],
            "obstacles": [{"x": o.x, "y": o.y, "radius": o.radius} for o in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrackSpec":
        return cls(
            segments=tuple(Segment(**s) for s in d["segments"]),
            lane_width=d.get("lane_width", 5.0),
            road_half_width=d.get("road_half_width", 7.5),
            obstacles=tuple(Obstacle(**o) for o in d.get("obstacles", [])),
            seed=d.get("seed", 0),
            profile=d.get("profile", "custom"),
        )

    def max_abs_curvature(self) -> float:
        return max(abs(s.curvature) for s in self.segments)


def _advance(x: float, y: float, h: float, seg: Segment) -> tuple[float, float, float]:
    if seg.kind == "line":
        return x + seg.length * math.cos(h), y + seg.length * math.sin(h), h
    k = seg.curvature
    h1 = h + k * seg.length
    # chord form of the arc end point
    x1 = x + (math.sin(h1) - math.sin(h)) / k
    y1 = y - (math.cos(h1) - math.cos(h)) / k
    return x1, y1, h1


@dataclass(frozen=True)
class TrackGenConfig:
    length: float = 600.0
    lane_width: float = 5.0
    road_half_width: float = 7.5
    min_turn_radius: float = 25.0
    max_turn_radius: float = 120.0
    lead_in: float = 20.0
    max_heading_deg: float = 80.0
    obstacles: int = 3
    obstacle_radius: float = 0.5
    obstacle_lateral: tuple[float, float] = (5.0, 7.0)


def generate_track(seed: int, profile: str, cfg: TrackGenConfig | None = None) -> TrackSpec:
    """Seeded track generator; same (seed, profile, cfg) gives an identical track."""
    cfg = cfg or TrackGenConfig()
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    if cfg.length < 200.0:
        raise ValueError("tracks must be at least 200 m long")
    rng = np.random.default_rng([seed, PROFILES.index(profile)])
    if profile == "straight":
        segs = [Segment("line", cfg.length)]
        return TrackSpec(tuple(segs), cfg.lane_width, cfg.road_half_width, (), seed, profile)

    max_h = math.radians(cfg.max_heading_deg)
    segs = [Segment("line", cfg.lead_in)]
    total, heading = cfg.lead_in, 0.0
    while total < cfg.length:
        want_arc = profile == "curves" or rng.random() < 0.5
        if profile == "curves" and segs[-1].kind == "arc" and rng.random() < 0.5:
            want_arc = False
        if want_arc:
            radius = rng.uniform(cfg.min_turn_radius, cfg.max_turn_radius)
            sweep = math.radians(rng.uniform(20.0, 70.0))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            if abs(heading + sign * sweep) > max_h:
                # turning back toward zero heading always fits: sweep < max_h
                sign = -sign
            seg = Segment("arc", radius * sweep, sign / radius)
            heading += sign * sweep
        else:
            seg = Segment("line", float(rng.uniform(20.0, 80.0)))
        segs.append(seg)
        total += seg.length

    track = TrackSpec(tuple(segs), cfg.lane_width, cfg.road_half_width, (), seed, profile)
    obstacles = []
    n_obs = cfg.obstacles if profile == "mixed" else max(cfg.obstacles - 1, 0)
    for _ in range(n_obs):
        s = rng.uniform(60.0, track.length - 20.0)
        side = 1.0 if rng.random() < 0.5 else -1.0
        off = rng.uniform(*cfg.obstacle_lateral)
        x, y, h = track.pose_at(float(s))
        obstacles.append(
            Obstacle(x - side * off * math.sin(h), y + side * off * math.cos(h), cfg.obstacle_radius)
        )
    return TrackSpec(tuple(segs), cfg.lane_width, cfg.road_half_width, tuple(obstacles), seed, profile)


def make_track_pool(seed: int, profile: str, size: int, cfg: TrackGenConfig | None = None) -> list[TrackSpec]:
    return [generate_track(seed + i, profile, cfg) for i in range(size)]


def dump_tracks(tracks: Iterable[TrackSpec], path) -> None:
    doc = {
        "format": TRACK_FORMAT,
        "version": TRACK_FORMAT_VERSION,
        "tracks": [t.to_dict() for t in tracks],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_tracks(path) -> list[TrackSpec]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != TRACK_FORMAT:
        raise ValueError(f"{path}: not a track pool document")
    if doc.get("version") != TRACK_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported track pool version {doc.get('version')}")
    return [TrackSpec.from_dict(t) for t in doc["tracks"]]
