"""Front-view lane raster and Hough-based lateral offset estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lanekeep import PX_TO_M
from lanekeep.sim.track import TrackSpec
from lanekeep.sim.vehicle import VehicleState

PERCEPTION_MODES = ("hough", "ground_truth", "ground_truth_noisy")

ROAD_INTENSITY = 0.2
MARKING_INTENSITY = 1.0


@dataclass(frozen=True)
class CameraConfig:
    """Flat-ground pinhole looking along the heading; 1/depth is linear in the row index."""

    z_near: float = 4.0  # ground distance seen by the bottom (reference) row
    z_far: float = 30.0  # ground distance seen by the top row
    half_span: float = 6.0  # lateral half-width seen by the bottom row, m
    marking_half_width: float = 0.12  # m
    min_marking_px: float = 0.6  # keeps far markings at least ~1 px wide


@dataclass(frozen=True)
class LaneRaster:
    pixels: np.ndarray  # (H, W) in [0, 1]
    px_per_m: float  # lateral pixels per meter on the reference (bottom) row

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def flipped(self) -> "LaneRaster":
        return LaneRaster(np.ascontiguousarray(self.pixels[:, ::-1]), self.px_per_m)


@dataclass(frozen=True)
class LaneEstimate:
    offset_px: float  # + = vehicle right of lane center, raster pixels
    confidence: float
    left_line: tuple[float, float] | None  # (rho px, theta rad)
    right_line: tuple[float, float] | None
    px_per_m: float = 1.0

    @property
    def offset_m(self) -> float:
        return self.offset_px / self.px_per_m


def _row_inverse_depth(h: int, cam: CameraConfig) -> np.ndarray:
    frac = (np.arange(h) + 0.5) / (h - 0.5)
    return 1.0 / cam.z_far + (1.0 / cam.z_near - 1.0 / cam.z_far) * frac


def render_raster(
    state: VehicleState,
    track: TrackSpec,
    size: tuple[int, int] = (64, 64),
    cam: CameraConfig = CameraConfig(),
) -> LaneRaster:
    h, w = size
    f_x = (w / 2) / cam.half_span * cam.z_near
    inv_z = _row_inverse_depth(h, cam)
    z = 1.0 / inv_z  # (H,)
    # pixel-center columns measured from the image center, + = right
    cols = (np.arange(w) + 0.5) - w / 2
    lat = cols[None, :] * z[:, None] / f_x  # (H, W) meters to the right
    zz = np.broadcast_to(z[:, None], (h, w))

    ch, sh = math.cos(state.heading), math.sin(state.heading)
    # forward = (ch, sh); right = (sh, -ch)
    gx = state.x + zz * ch + lat * sh
    gy = state.y + zz * sh - lat * ch
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    cand = track.segments_near(state.progress - 10.0, state.progress + cam.z_far + 20.0)
    proj = track.project(pts, cand or None)
    d = np.abs(proj.left).reshape(h, w)

    tol = np.maximum(cam.marking_half_width, cam.min_marking_px * zz / f_x)
    pix = np.full((h, w), ROAD_INTENSITY)
    pix[np.abs(d - track.lane_width / 2) <= tol] = MARKING_INTENSITY
    return LaneRaster(pix, f_x / cam.z_near)


def write_pgm(raster: LaneRaster, path) -> None:
    """Binary P5 graymap, 8 bits per pixel."""
    data = np.clip(np.rint(raster.pixels * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(float) / maxval


@dataclass(frozen=True)
class HoughConfig:
    threshold: float = 0.5
    theta_max_deg: int = 80
    min_votes_frac: float = 0.25  # of the raster height
    min_separation_px: float = 3.0


def _thetas(theta_max_deg: int):
    deg = np.arange(-theta_max_deg, theta_max_deg + 1)
    pos = np.radians(np.abs(deg).astype(float))
    # sin taken on |theta| and re-signed so the table is exactly odd
    return np.radians(deg.astype(float)), np.cos(pos), np.sign(deg) * np.sin(pos)


def hough_accumulator(raster: LaneRaster, cfg: HoughConfig = HoughConfig()):
    """Vote array over (rho, theta); image coordinates centered on the reference row.

    x runs from the image center column (pixel centers, + = right) and y from
    the bottom row center (negative upward), so a line's reference-row column
    is simply rho / cos(theta).
    """
    h, w = raster.shape
    theta, cos_t, sin_t = _thetas(cfg.theta_max_deg)
    rows, cols = np.nonzero(raster.pixels > cfg.threshold)
    x = (cols + 0.5) - w / 2
    y = (rows + 0.5) - (h - 0.5)
    rho_max = int(math.ceil(math.hypot(w / 2, h))) + 1
    rho = np.rint(x[:, None] * cos_t[None, :] + y[:, None] * sin_t[None, :]).astype(int)
    acc = np.zeros((2 * rho_max + 1, len(theta)), dtype=int)
    if len(x):
        t_idx = np.broadcast_to(np.arange(len(theta)), rho.shape)
        np.add.at(acc, (rho + rho_max, t_idx), 1)
    return acc, np.arange(-rho_max, rho_max + 1), theta, cos_t


def hough_lane_offset(raster: LaneRaster, cfg: HoughConfig = HoughConfig()) -> LaneEstimate:
    h, w = raster.shape
    acc, rhos, theta, cos_t = hough_accumulator(raster, cfg)
    none = LaneEstimate(0.0, 0.0, None, None, raster.px_per_m)
    min_votes = max(2, int(cfg.min_votes_frac * h))
    r_idx, t_idx = np.nonzero(acc >= min_votes)
    if len(r_idx) < 2:
        return none
    votes = acc[r_idx, t_idx]
    # deterministic, mirror-symmetric ordering: votes, then near-vertical, then near-center
    order = np.lexsort((np.abs(rhos[r_idx]), np.abs(theta[t_idx]), -votes))
    x_ref = rhos[r_idx] / cos_t[t_idx]

    first = order[0]
    th1 = theta[t_idx[first]]
    second = None
    for j in order[1:]:
        th2 = theta[t_idx[j]]
        if th1 * th2 > 0:
            continue  # same lean as the first line
        if abs(x_ref[j] - x_ref[first]) < cfg.min_separation_px:
            continue
        second = j
        break
    if second is None:
        return none
    a, b = (first, second) if x_ref[first] < x_ref[second] else (second, first)
    mid = 0.5 * (x_ref[a] + x_ref[b])
    offset = -mid
    offset = float(np.clip(offset, -w / 2, w / 2))
    conf = min(1.0, min(votes[first], votes[second]) / float(h))
    left = (float(rhos[r_idx[a]]), float(theta[t_idx[a]]))
    right = (float(rhos[r_idx[b]]), float(theta[t_idx[b]]))
    return LaneEstimate(offset, conf, left, right, raster.px_per_m)


class ControlOffset:
    """Chooses the lateral offset (paper-scale pixels) handed to the PID.

    ``hough`` holds the last valid detection when the estimator fails.
    """

    def __init__(self, mode: str = "ground_truth", noise_px: float = 2.0, seed: int = 0):
        if mode not in PERCEPTION_MODES:
            raise ValueError(f"unknown perception mode {mode!r}")
        self.mode = mode
        self.noise_px = noise_px
        self.rng = np.random.default_rng(seed)
        self.last = 0.0

    def reset(self) -> None:
        self.last = 0.0

    def __call__(self, estimate: LaneEstimate | None, ground_truth_px: float) -> float:
        if self.mode == "ground_truth":
            return ground_truth_px
        if self.mode == "ground_truth_noisy":
            return ground_truth_px + float(self.rng.normal(0.0, self.noise_px))
        if estimate is not None and estimate.confidence > 0:
            self.last = estimate.offset_m / PX_TO_M
        return self.last


def offset_for_control(
    estimate: LaneEstimate | None,
    ground_truth_px: float,
    mode: str,
    selector: ControlOffset | None = None,
) -> float:
    sel = selector if selector is not None else ControlOffset(mode)
    if sel.mode != mode:
        raise ValueError("selector mode does not match")
    return sel(estimate, ground_truth_px)


def meters_to_px(d_m: float) -> float:
    return d_m / PX_TO_M
