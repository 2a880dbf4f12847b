"""Episode lifecycle: dynamics, sensing, PID feature, semantics and reward per step."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from lanekeep import PX_TO_M
from lanekeep.config import RunConfig
from lanekeep.control import PidGains, PidState, map_action, pid_reset, pid_step
from lanekeep.fusion import Observation, RunningNorm, assemble_observation
from lanekeep.perception import CameraConfig, ControlOffset, LaneRaster, hough_lane_offset, render_raster
from lanekeep.reward import RewardBreakdown, RewardParams, Termination, total_reward
from lanekeep.semantics import (
    EncoderWeights,
    SemanticEmbedding,
    TokenCache,
    caption_from_scene,
    encode_semantics,
)
from lanekeep.sim.lidar import LidarScan, cast_lidar
from lanekeep.sim.scene import Curvature, DistanceClass, Direction, SceneDescriptor, describe_scene
from lanekeep.sim.track import TrackGenConfig, TrackSpec, make_track_pool
from lanekeep.sim.vehicle import VehicleParams, VehicleState, reset_episode, step_dynamics


def vehicle_params(cfg: RunConfig) -> VehicleParams:
    s = cfg.sim
    return VehicleParams(s.wheelbase, s.max_steering_angle, s.speed_lag, s.dt, s.v_max_kmh, s.start_s,
                         s.start_jitter, s.start_speed_kmh)


def track_gen_config(cfg: RunConfig) -> TrackGenConfig:
    s = cfg.sim
    return TrackGenConfig(
        length=s.track_length,
        lane_width=s.lane_width,
        road_half_width=s.road_half_width,
        min_turn_radius=s.min_turn_radius,
        max_turn_radius=s.max_turn_radius,
        obstacles=s.obstacles,
    )


def training_pool(cfg: RunConfig) -> list[TrackSpec]:
    return make_track_pool(cfg.sim.track_seed, cfg.sim.track_profile, cfg.sim.track_pool_size, track_gen_config(cfg))


def reward_params(cfg: RunConfig) -> RewardParams:
    return RewardParams(**asdict(cfg.reward))


def pid_gains(cfg: RunConfig) -> PidGains:
    p = cfg.pid
    return PidGains(p.kp, p.ki, p.kd, p.i_max, p.u_max, cfg.sim.dt)


@dataclass
class StepInfo:
    state: VehicleState
    breakdown: RewardBreakdown
    scene: SceneDescriptor
    scan: LidarScan
    pid_output: float
    dx_px: float  # ground-truth lateral offset, paper-scale pixels


class LaneKeepingEnv:
    """Single-threaded environment; create one instance per worker."""

    def __init__(
        self,
        cfg: RunConfig,
        tracks: list[TrackSpec] | None = None,
        seed: int | None = None,
        encoder: EncoderWeights | None = None,
        norm: RunningNorm | None = None,
    ):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.tracks = list(tracks) if tracks is not None else training_pool(cfg)
        self.vparams = vehicle_params(cfg)
        self.rparams = reward_params(cfg)
        self.gains = pid_gains(cfg)
        pc = cfg.perception
        self.camera = CameraConfig(z_near=pc.z_near, z_far=pc.z_far, half_span=pc.half_span)
        self.size = (pc.height, pc.width)
        sc = cfg.semantics
        self.encoder = encoder or EncoderWeights.init(sc.seed, sc.dim, sc.rank, sc.queries, sc.patch)
        self.norm = norm or RunningNorm(sc.dim, sc.warmup)
        self.cache = TokenCache(sc.cache_period)
        self.selector = ControlOffset(pc.mode, pc.noise_px, seed=self.seed + 17)
        variant = cfg.ppo.variant
        self.mask_pid = variant in ("no_pid", "no_semantic_no_pid")
        self.mask_semantic = variant in ("no_semantic", "no_semantic_no_pid")
        self.episode_index = -1
        self.state: VehicleState | None = None
        self.track: TrackSpec | None = None
        self.pid = pid_reset()
        self.violations = 0
        self.obs: Observation | None = None
        self.scene: SceneDescriptor | None = None
        self.scan: LidarScan | None = None
        self.raster: LaneRaster | None = None

    # -- sensing ---------------------------------------------------------
    def _sense(self, state: VehicleState) -> tuple[Observation, float]:
        s = self.cfg.sim
        scan = cast_lidar(state, self.track, s.lidar_rays, s.lidar_max_range)
        raster = render_raster(state, self.track, self.size, self.camera)
        gt_px = state.lateral_offset / PX_TO_M
        estimate = hough_lane_offset(raster) if self.selector.mode == "hough" else None
        ctrl_px = self.selector(estimate, gt_px)
        self.pid, u = pid_step(self.pid, ctrl_px * PX_TO_M, self.gains)
        scene = describe_scene(state, self.track, scan)
        emb = self.cache.get(state.step_index, lambda: self.embed(raster.pixels, scene))
        obs = assemble_observation(
            raster, scan, u, emb.e, self.gains.u_max, self.norm, self.mask_pid, self.mask_semantic
        )
        self.scan, self.raster, self.scene = scan, raster, scene
        return obs, u

    def embed(self, pixels: np.ndarray, scene: SceneDescriptor) -> SemanticEmbedding:
        return encode_semantics(caption_from_scene(scene), pixels, self.encoder, self.cfg.semantics.use_lora)

    def token_fn(self, pixels: np.ndarray, scene: SceneDescriptor) -> np.ndarray:
        """Normalized semantic vector for an arbitrary raster/scene (no statistics update)."""
        if self.mask_semantic:
            return np.zeros(self.cfg.semantics.dim)
        return self.norm(self.embed(pixels, scene).e)

    # -- lifecycle -------------------------------------------------------
    def reset(self, episode_index: int | None = None, track: TrackSpec | None = None) -> Observation:
        self.episode_index = self.episode_index + 1 if episode_index is None else episode_index
        pool = [track] if track is not None else self.tracks
        idx = 0 if track is not None else self.episode_index
        self.state, self.track = reset_episode(pool, idx, self.seed + self.episode_index, self.vparams)
        self.pid = pid_reset(self.gains)
        self.selector.reset()
        self.cache.reset()
        self.violations = 0
        self.obs, _ = self._sense(self.state)
        return self.obs

    def step(self, action) -> tuple[Observation, float, bool, StepInfo]:
        if self.state is None:
            raise RuntimeError("call reset() first")
        cmd = map_action(action, self.vparams.max_steering_angle, self.vparams.v_max)
        state = step_dynamics(self.state, cmd.steering_cmd, cmd.target_speed_cmd, self.vparams.dt, self.track,
                              self.vparams)
        obs, u = self._sense(state)
        dx_px = state.lateral_offset / PX_TO_M
        self.violations = self.violations + 1 if self.scan.d_min < self.rparams.d_fail else 0
        br = total_reward(dx_px, self.scan.d_min, state.speed_kmh, state.step_index, self.rparams,
                          violations=self.violations, max_steps=self.cfg.sim.max_episode_steps)
        if not br.terminated and state.progress >= self.track.length - 1.0:
            # end of the road counts as truncation, like running out of steps
            br = RewardBreakdown(br.r_lane, br.r_lidar, br.r_speed, br.r_center, br.shaped, br.reward, True,
                                 Termination.MAX_STEPS)
        self.state, self.obs = state, obs
        info = StepInfo(state, br, self.scene, self.scan, u, dx_px)
        return obs, br.reward, br.terminated, info

    # -- checkpointing ---------------------------------------------------
    def state_dict(self) -> dict:
        """Everything needed to continue the current episode bit-exactly."""
        st, obs = self.state, self.obs
        return {
            "episode_index": self.episode_index,
            "vehicle": None if st is None else asdict(st),
            "pid": self.pid._asdict(),
            "violations": self.violations,
            "selector_last": self.selector.last,
            "selector_rng": self.selector.rng.bit_generator.state,
            "cache": None if self.cache.value is None else self.cache.value.e.tolist(),
            "norm": self.norm.state_dict(),
            "obs": None if obs is None else {
                "raster": obs.raster.tolist(),
                "lidar": obs.lidar.tolist(),
                "pid": obs.pid,
                "semantic": obs.semantic.tolist(),
            },
            "scene": None if self.scene is None else {k: getattr(v, "value", v) for k, v in asdict(self.scene).items()},
        }

    def load_state_dict(self, d: dict) -> None:
        self.norm.load_state_dict(d["norm"])
        self.episode_index = d["episode_index"]
        self.pid = PidState(**d["pid"])
        self.violations = d["violations"]
        self.selector.last = d["selector_last"]
        self.selector.rng.bit_generator.state = d["selector_rng"]
        self.cache.value = None if d["cache"] is None else SemanticEmbedding(np.array(d["cache"]))
        if d["vehicle"] is None:
            self.state = self.obs = self.scene = None
            return
        self.track = self.tracks[self.episode_index % len(self.tracks)]
        self.state = VehicleState(**d["vehicle"])
        o = d["obs"]
        self.obs = Observation(np.array(o["raster"]), np.array(o["lidar"]), o["pid"], np.array(o["semantic"]))
        sc = d["scene"]
        self.scene = SceneDescriptor(Curvature(sc["curvature_class"]), Direction(sc["curve_direction"]),
                                     sc["obstacle_ahead"], DistanceClass(sc["obstacle_distance_class"]),
                                     sc["lane_marking_visible"])
