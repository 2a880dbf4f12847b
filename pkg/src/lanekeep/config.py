"""Run configuration: one JSON document with a section per module."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

from lanekeep.perception import PERCEPTION_MODES
from lanekeep.fusion import AUGMENT_MODES

VARIANTS = ("full", "no_semantic", "no_pid", "no_semantic_no_pid")


class ConfigError(ValueError):
    pass


@dataclass
class SimSection:
    wheelbase: float = 2.5
    max_steering_angle: float = 0.5
    speed_lag: float = 0.5
    dt: float = 0.05
    v_max_kmh: float = 40.0
    start_s: float = 5.0
    start_jitter: float = 0.5
    start_speed_kmh: float = 20.0
    lidar_rays: int = 180
    lidar_max_range: float = 12.0
    track_profile: str = "mixed"
    track_pool_size: int = 8
    track_seed: int = 1000
    track_length: float = 600.0
    min_turn_radius: float = 25.0
    max_turn_radius: float = 120.0
    lane_width: float = 5.0
    road_half_width: float = 7.5
    obstacles: int = 3
    max_episode_steps: int = 1000

    def check(self):
        _positive(self, "wheelbase", "max_steering_angle", "speed_lag", "dt", "v_max_kmh", "lidar_max_range",
                  "lane_width", "min_turn_radius")
        if self.track_profile not in ("straight", "curves", "mixed"):
            raise ConfigError(f"sim.track_profile: unknown profile {self.track_profile!r}")
        if self.lidar_rays < 2 or self.track_pool_size < 1 or self.max_episode_steps < 1:
            raise ConfigError("sim: lidar_rays >= 2, track_pool_size >= 1, max_episode_steps >= 1")
        if self.track_length < 200:
            raise ConfigError("sim.track_length must be >= 200 m")
        if self.max_turn_radius < self.min_turn_radius:
            raise ConfigError("sim.max_turn_radius < min_turn_radius")
        if not 0 <= self.start_jitter <= self.lane_width / 2:
            raise ConfigError("sim.start_jitter out of range")


@dataclass
class PerceptionSection:
    height: int = 64
    width: int = 64
    mode: str = "ground_truth"
    noise_px: float = 2.0
    z_near: float = 4.0
    z_far: float = 30.0
    half_span: float = 6.0

    def check(self):
        if self.mode not in PERCEPTION_MODES:
            raise ConfigError(f"perception.mode: unknown mode {self.mode!r}")
        if not (8 <= self.height <= 224 and 8 <= self.width <= 224):
            raise ConfigError("perception raster size must be within 8..224")
        if not 0 < self.z_near < self.z_far:
            raise ConfigError("perception: need 0 < z_near < z_far")


@dataclass
class SemanticsSection:
    dim: int = 32
    rank: int = 4
    queries: int = 4
    patch: int = 16
    cache_period: int = 10
    warmup: int = 1000
    regenerate_tokens: bool = False
    use_lora: bool = True
    seed: int = 7

    def check(self):
        if not 0 < self.rank < self.dim:
            raise ConfigError("semantics: need 0 < rank < dim")
        if self.cache_period < 1 or self.queries < 1 or self.warmup < 0:
            raise ConfigError("semantics: cache_period, queries >= 1; warmup >= 0")


@dataclass
class PidSection:
    kp: float = 0.8
    ki: float = 0.05
    kd: float = 0.3
    i_max: float = 2.0
    u_max: float = 1.0

    def check(self):
        _positive(self, "i_max", "u_max")


@dataclass
class RewardSection:
    w_lane: float = 0.3
    w_lidar: float = 0.3
    w_speed: float = 0.2
    w_center: float = 0.2
    d_lane: float = 100.0
    d_clip: float = 80.0
    d_reset: float = 85.0
    k: float = 2.5
    v_target: float = 20.0
    d_mid: float = 8.0
    d_low: float = 4.0
    d_crit: float = 2.8
    d_fail: float = 2.0
    b1: float = 5.0
    b2: float = 10.0
    b3: float = 2.0
    r_bonus: float = 5.0
    bonus_ranges: list = field(default_factory=lambda: [[3.0, 4.0], [8.0, 10.0]])
    r_clip: float = 1.0
    r_fail: float = 3.0
    n_violations: int = 1

    def check(self):
        from lanekeep.reward import RewardParams

        try:
            RewardParams(**_as_dict(self))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"reward: {exc}") from exc


@dataclass
class PpoSection:
    learning_rate: float = 3e-4
    rollout_steps: int = 2048
    batch_size: int = 64
    epochs: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    grad_clip: float = 0.5
    total_steps: int = 100_000
    entropy_coef: float = 0.0
    init_log_std: float = -0.5
    adam_eps: float = 1e-5
    augment: str = "every_step"
    t_aug: int = 4
    variant: str = "full"
    image_filters: list = field(default_factory=lambda: [8, 16])
    image_dense: int = 64
    lidar_dense: int = 32
    semantic_dense: int = 32
    pid_dense: int = 8
    fusion_dense: int = 128
    dtype: str = "float32"

    def check(self):
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError("ppo: need 0 < gamma <= 1 and 0 <= gae_lambda <= 1")
        _positive(self, "learning_rate", "clip_eps", "grad_clip")
        if self.rollout_steps % self.batch_size:
            raise ConfigError("ppo.rollout_steps must be divisible by ppo.batch_size")
        if self.augment not in AUGMENT_MODES:
            raise ConfigError(f"ppo.augment: unknown mode {self.augment!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"ppo.variant: unknown variant {self.variant!r}")
        if self.epochs < 1 or self.total_steps < 1 or self.t_aug < 1:
            raise ConfigError("ppo: epochs, total_steps, t_aug must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("ppo.dtype must be float32 or float64")
        if len(self.image_filters) != 2:
            raise ConfigError("ppo.image_filters needs two entries")


@dataclass
class EvalSection:
    n_trials: int = 100
    seed: int = 50_000
    profile: str = "mixed"
    max_steps: int = 1000

    def check(self):
        if self.n_trials < 1 or self.max_steps < 1:
            raise ConfigError("eval: n_trials and max_steps must be >= 1")
        if self.profile not in ("straight", "curves", "mixed"):
            raise ConfigError(f"eval.profile: unknown profile {self.profile!r}")


_SECTIONS = {
    "sim": SimSection,
    "perception": PerceptionSection,
    "semantics": SemanticsSection,
    "pid": PidSection,
    "reward": RewardSection,
    "ppo": PpoSection,
    "eval": EvalSection,
}


@dataclass
class RunConfig:
    sim: SimSection = field(default_factory=SimSection)
    perception: PerceptionSection = field(default_factory=PerceptionSection)
    semantics: SemanticsSection = field(default_factory=SemanticsSection)
    pid: PidSection = field(default_factory=PidSection)
    reward: RewardSection = field(default_factory=RewardSection)
    ppo: PpoSection = field(default_factory=PpoSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    output_dir: str = "runs/default"

    def check(self) -> "RunConfig":
        for name in _SECTIONS:
            getattr(self, name).check()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(_SECTIONS) - {"seed", "output_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for name, sec_cls in _SECTIONS.items():
            sec = d.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be an object")
            known = {f.name for f in dataclasses.fields(sec_cls)}
            bad = set(sec) - known
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                kwargs[name] = sec_cls(**sec)
            except TypeError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        if "seed" in d:
            kwargs["seed"] = _int(d["seed"], "seed")
        if "output_dir" in d:
            kwargs["output_dir"] = str(d["output_dir"])
        return cls(**kwargs).check()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def replace(self, **sections) -> "RunConfig":
        """Copy with per-section overrides, e.g. ``replace(ppo={"total_steps": 10})``."""
        d = self.to_dict()
        for name, upd in sections.items():
            if isinstance(upd, dict):
                d[name].update(upd)
            else:
                d[name] = upd
        return RunConfig.from_dict(d)


def _as_dict(section) -> dict:
    return dataclasses.asdict(section)


def _positive(obj, *names):
    for n in names:
        if not getattr(obj, n) > 0:
            raise ConfigError(f"{type(obj).__name__[:-7].lower()}.{n} must be positive")


def _int(v, name):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer")
    return v
