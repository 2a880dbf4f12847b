"""Observation assembly, left-right mirror augmentation, and rollout dumps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from lanekeep.perception import LaneRaster
from lanekeep.sim.lidar import LidarScan
from lanekeep.sim.scene import SceneDescriptor

AUGMENT_MODES = ("off", "every_step", "every_T")


@dataclass(frozen=True)
class Observation:
    raster: np.ndarray  # (H, W) in [0, 1]
    lidar: np.ndarray  # (R,) in [0, 1], index 0 = rightmost ray
    pid: float  # in [-1, 1]
    semantic: np.ndarray  # (d,)

    def __eq__(self, other):
        return (
            isinstance(other, Observation)
            and np.array_equal(self.raster, other.raster)
            and np.array_equal(self.lidar, other.lidar)
            and self.pid == other.pid
            and np.array_equal(self.semantic, other.semantic)
        )

    def mirrored(self, semantic: np.ndarray | None = None) -> "Observation":
        return Observation(
            np.ascontiguousarray(self.raster[:, ::-1]),
            np.ascontiguousarray(self.lidar[::-1]),
            -self.pid,
            self.semantic if semantic is None else semantic,
        )

    def validate(self) -> None:
        if not (np.all(np.isfinite(self.raster)) and np.all(np.isfinite(self.lidar))):
            raise ValueError("non-finite observation")
        if not np.all(np.isfinite(self.semantic)) or not np.isfinite(self.pid):
            raise ValueError("non-finite observation")
        if self.raster.min() < 0 or self.raster.max() > 1:
            raise ValueError("raster outside [0, 1]")
        if self.lidar.min() < 0 or self.lidar.max() > 1:
            raise ValueError("lidar outside [0, 1]")
        if abs(self.pid) > 1:
            raise ValueError("pid outside [-1, 1]")


@dataclass
class RunningNorm:
    """Per-dimension standardizer whose statistics freeze after ``warmup`` updates."""

    dim: int
    warmup: int = 1000
    eps: float = 1e-8
    count: int = 0
    mean: np.ndarray = field(default=None)
    m2: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros(self.dim)

    @property
    def frozen(self) -> bool:
        return self.count >= self.warmup

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.sqrt(self.m2 / self.count + self.eps)

    def update(self, x: np.ndarray) -> None:
        if self.frozen:
            return
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def state_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    def load_state_dict(self, d: dict) -> None:
        self.count = int(d["count"])
        self.mean = np.array(d["mean"], dtype=float)
        self.m2 = np.array(d["m2"], dtype=float)


def assemble_observation(
    raster: LaneRaster | np.ndarray,
    scan: LidarScan,
    u_t: float,
    semantic: np.ndarray,
    u_max: float = 1.0,
    norm: RunningNorm | None = None,
    mask_pid: bool = False,
    mask_semantic: bool = False,
) -> Observation:
    """Scale every modality into its range; masked modalities become zeros of the same shape."""
    pix = raster.pixels if isinstance(raster, LaneRaster) else np.asarray(raster, dtype=float)
    lidar = np.clip(scan.ranges, 0.0, scan.max_range) / scan.max_range
    pid = float(np.clip(u_t / u_max, -1.0, 1.0))
    sem = np.asarray(semantic, dtype=float)
    if norm is not None:
        if sem.shape != (norm.dim,):
            raise ValueError(f"semantic vector shape {sem.shape} != ({norm.dim},)")
        norm.update(sem)
        sem = norm(sem)
    if mask_pid:
        pid = 0.0
    if mask_semantic:
        sem = np.zeros_like(sem)
    return Observation(pix, lidar, pid, sem)


@dataclass(frozen=True)
class Transition:
    obs: Observation
    action: tuple[float, float]  # unclipped policy sample
    reward: float
    next_obs: Observation
    done: bool
    log_prob: float
    value: float
    scene: SceneDescriptor | None = None
    next_scene: SceneDescriptor | None = None
    mirrored: bool = False


TokenFn = Callable[[np.ndarray, SceneDescriptor], np.ndarray]


def mirror_transition(t: Transition, regenerate_tokens: bool = False, token_fn: TokenFn | None = None) -> Transition:
    """Horizontal mirror: flip raster, reverse LiDAR, negate PID and steering.

    The speed action, reward and done flag carry over. With
    ``regenerate_tokens`` the semantic vector is recomputed by ``token_fn``
    from the flipped raster and the mirrored scene description.
    """
    sem = next_sem = None
    scene, next_scene = t.scene, t.next_scene
    if regenerate_tokens:
        if token_fn is None or t.scene is None or t.next_scene is None:
            raise ValueError("token regeneration needs token_fn and scene descriptors")
        scene, next_scene = t.scene.mirrored(), t.next_scene.mirrored()
        sem = token_fn(t.obs.raster[:, ::-1], scene)
        next_sem = token_fn(t.next_obs.raster[:, ::-1], next_scene)
    elif scene is not None:
        scene, next_scene = scene.mirrored(), next_scene.mirrored() if next_scene else None
    return replace(
        t,
        obs=t.obs.mirrored(sem),
        next_obs=t.next_obs.mirrored(next_sem),
        action=(-t.action[0], t.action[1]),
        scene=scene,
        next_scene=next_scene,
        mirrored=not t.mirrored,
    )


def augment_indices(n: int, mode: str, t_aug: int = 1) -> list[int]:
    """Indices of the transitions that receive a mirrored copy."""
    if mode not in AUGMENT_MODES:
        raise ValueError(f"unknown augmentation mode {mode!r}")
    if t_aug < 1:
        raise ValueError("T_aug must be >= 1")
    if mode == "off":
        return []
    if mode == "every_step":
        return list(range(n))
    return list(range(0, n, t_aug))


def augment_buffer(
    buffer: Sequence[Transition],
    mode: str = "every_step",
    t_aug: int = 1,
    regenerate_tokens: bool = False,
    token_fn: TokenFn | None = None,
) -> list[Transition]:
    """Originals first, then mirrors in source order."""
    idx = augment_indices(len(buffer), mode, t_aug)
    return list(buffer) + [mirror_transition(buffer[i], regenerate_tokens, token_fn) for i in idx]


def transition_record(t: Transition, index: int, full: bool = False) -> dict:
    def obs_dict(o: Observation) -> dict:
        d = {"lidar": o.lidar.tolist(), "pid": o.pid, "semantic": o.semantic.tolist()}
        if full:
            d["raster"] = o.raster.tolist()
        return d

    rec = {
        "index": index,
        "action": [float(t.action[0]), float(t.action[1])],
        "reward": float(t.reward),
        "done": bool(t.done),
        "log_prob": float(t.log_prob),
        "value": float(t.value),
        "mirrored": t.mirrored,
        "obs": obs_dict(t.obs),
        "next_obs": obs_dict(t.next_obs),
    }
    if t.scene is not None:
        rec["scene"] = {k: getattr(v, "value", v) for k, v in vars(t.scene).items()}
    return rec


def dump_jsonl(transitions: Iterable[Transition], path, full: bool = False) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for i, t in enumerate(transitions):
            fh.write(json.dumps(transition_record(t, i, full)) + "\n")
            n += 1
    return n
