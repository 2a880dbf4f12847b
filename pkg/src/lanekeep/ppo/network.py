"""Actor-critic fusion network with hand-derived backward pass (float64 numpy).

Layout (per sample)::

    raster -> conv3x3/2 -> tanh -> conv3x3/2 -> tanh -> flatten -> dense -> tanh --+
    lidar  -> dense -> tanh ------------------------------------------------------+
    semantic -> dense -> tanh ----------------------------------------------------+-> concat
    pid    -> dense -> tanh ------------------------------------------------------+
    concat -> dense(128) -> relu -> {actor mean (2), critic value (1)}

plus two free log-std parameters clamped to [-5, 2].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
KERNEL, STRIDE = 3, 2


@dataclass(frozen=True)
class NetSpec:
    height: int = 64
    width: int = 64
    n_rays: int = 180
    sem_dim: int = 32
    filters: tuple[int, int] = (8, 16)
    image_dense: int = 64
    lidar_dense: int = 32
    semantic_dense: int = 32
    pid_dense: int = 8
    fusion: int = 128
    n_actions: int = 2

    def conv_out(self, n: int) -> int:
        return (n - KERNEL) // STRIDE + 1

    @property
    def conv_shapes(self) -> tuple[tuple[int, int], tuple[int, int]]:
        h1, w1 = self.conv_out(self.height), self.conv_out(self.width)
        return (h1, w1), (self.conv_out(h1), self.conv_out(w1))

    @property
    def flat_dim(self) -> int:
        (_, _), (h2, w2) = self.conv_shapes
        return h2 * w2 * self.filters[1]

    @property
    def concat_dim(self) -> int:
        return self.image_dense + self.lidar_dense + self.semantic_dense + self.pid_dense

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        f1, f2 = self.filters
        k2 = KERNEL * KERNEL
        return [
            ("conv1.w", (k2, f1)),
            ("conv1.b", (f1,)),
            ("conv2.w", (k2 * f1, f2)),
            ("conv2.b", (f2,)),
            ("image.w", (self.flat_dim, self.image_dense)),
            ("image.b", (self.image_dense,)),
            ("lidar.w", (self.n_rays, self.lidar_dense)),
            ("lidar.b", (self.lidar_dense,)),
            ("semantic.w", (self.sem_dim, self.semantic_dense)),
            ("semantic.b", (self.semantic_dense,)),
            ("pid.w", (1, self.pid_dense)),
            ("pid.b", (self.pid_dense,)),
            ("fusion.w", (self.concat_dim, self.fusion)),
            ("fusion.b", (self.fusion,)),
            ("actor.w", (self.fusion, self.n_actions)),
            ("actor.b", (self.n_actions,)),
            ("log_std", (self.n_actions,)),
            ("critic.w", (self.fusion, 1)),
            ("critic.b", (1,)),
        ]


@dataclass
class ObsBatch:
    raster: np.ndarray  # (B, H, W)
    lidar: np.ndarray  # (B, R)
    pid: np.ndarray  # (B, 1)
    semantic: np.ndarray  # (B, d)

    def __len__(self):
        return self.raster.shape[0]

    def take(self, idx) -> "ObsBatch":
        return ObsBatch(self.raster[idx], self.lidar[idx], self.pid[idx], self.semantic[idx])

    @classmethod
    def stack(cls, observations: Sequence, dtype=np.float64) -> "ObsBatch":
        return cls(
            np.stack([o.raster for o in observations]).astype(dtype),
            np.stack([o.lidar for o in observations]).astype(dtype),
            np.array([[o.pid] for o in observations], dtype=dtype),
            np.stack([o.semantic for o in observations]).astype(dtype),
        )

    def astype(self, dtype) -> "ObsBatch":
        return ObsBatch(*(np.asarray(a, dtype=dtype) for a in (self.raster, self.lidar, self.pid, self.semantic)))


def init_params(spec: NetSpec, seed: int, init_log_std: float = -0.5) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 0xAC7])
    params: dict[str, np.ndarray] = {}
    gains = {"fusion.w": np.sqrt(2.0), "actor.w": 0.01, "critic.w": 1.0}
    for name, shape in spec.param_shapes():
        if name == "log_std":
            params[name] = np.full(shape, float(init_log_std))
        elif name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[0]
            params[name] = rng.normal(0.0, gains.get(name, 1.0) / np.sqrt(fan_in), shape)
    return params


def _conv_cols(x: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B, Ho, Wo, k*k*C) patch matrix, (ki, kj, c) ordering."""
    b, h, w, c = x.shape
    ho, wo = (h - KERNEL) // STRIDE + 1, (w - KERNEL) // STRIDE + 1
    out = np.empty((b, ho, wo, KERNEL * KERNEL, c), dtype=x.dtype)
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            out[:, :, :, ki * KERNEL + kj, :] = x[:, ki : ki + STRIDE * (ho - 1) + 1 : STRIDE,
                                                 kj : kj + STRIDE * (wo - 1) + 1 : STRIDE, :]
    return out.reshape(b, ho, wo, KERNEL * KERNEL * c)


def _conv_cols_backward(dcols: np.ndarray, x_shape: tuple[int, ...]) -> np.ndarray:
    b, ho, wo, _ = dcols.shape
    d5 = dcols.reshape(b, ho, wo, KERNEL * KERNEL, x_shape[3])
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            dx[:, ki : ki + STRIDE * (ho - 1) + 1 : STRIDE, kj : kj + STRIDE * (wo - 1) + 1 : STRIDE, :] += d5[
                :, :, :, ki * KERNEL + kj, :
            ]
    return dx


class FusionNetwork:
    """``dtype`` float32 is used for training throughput, float64 for gradient checks."""

    def __init__(self, spec: NetSpec, params: dict[str, np.ndarray] | None = None, seed: int = 0,
                 init_log_std: float = -0.5, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        if params is None:
            params = init_params(spec, seed, init_log_std)
        self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.spec.param_shapes()]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.names])

    def set_flat(self, v: np.ndarray) -> None:
        i = 0
        for n, shape in self.spec.param_shapes():
            size = int(np.prod(shape))
            self.params[n] = v[i : i + size].reshape(shape).astype(self.dtype)
            i += size

    def copy(self) -> "FusionNetwork":
        return FusionNetwork(self.spec, {k: v.copy() for k, v in self.params.items()}, dtype=self.dtype)

    def log_std(self) -> np.ndarray:
        return np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)

    def forward(self, obs: ObsBatch, keep: bool = False):
        """Returns (mean (B,2), log_std (2,), value (B,), cache)."""
        p = self.params
        b = len(obs)
        obs = obs.astype(self.dtype)
        x0 = obs.raster[..., None]
        cols1 = _conv_cols(x0)
        c1 = np.tanh(cols1 @ p["conv1.w"] + p["conv1.b"])
        cols2 = _conv_cols(c1)
        c2 = np.tanh(cols2 @ p["conv2.w"] + p["conv2.b"])
        flat = c2.reshape(b, -1)
        img = np.tanh(flat @ p["image.w"] + p["image.b"])
        lid = np.tanh(obs.lidar @ p["lidar.w"] + p["lidar.b"])
        sem = np.tanh(obs.semantic @ p["semantic.w"] + p["semantic.b"])
        pid = np.tanh(obs.pid @ p["pid.w"] + p["pid.b"])
        z = np.concatenate([img, lid, sem, pid], axis=1)
        pre = z @ p["fusion.w"] + p["fusion.b"]
        h = np.maximum(pre, 0.0)
        mean = h @ p["actor.w"] + p["actor.b"]
        value = (h @ p["critic.w"] + p["critic.b"])[:, 0]
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(value))):
            raise FloatingPointError(
                f"non-finite network output: |pre|max={np.abs(pre).max():.3g}, "
                f"param max={max(np.abs(v).max() for v in p.values()):.3g}"
            )
        cache = None
        if keep:
            cache = dict(obs=obs, x0=x0, cols1=cols1, c1=c1, cols2=cols2, c2=c2, flat=flat, img=img, lid=lid,
                         sem=sem, pid=pid, z=z, pre=pre, h=h)
        return mean, self.log_std(), value, cache

    def backward(self, cache: dict, d_mean: np.ndarray, d_log_std: np.ndarray, d_value: np.ndarray):
        """Gradients of a scalar loss given its partials w.r.t. the three outputs."""
        p = self.params
        g: dict[str, np.ndarray] = {}
        h = cache["h"]
        d_mean = np.asarray(d_mean, dtype=self.dtype)
        d_value = np.asarray(d_value, dtype=self.dtype)
        d_log_std = np.asarray(d_log_std, dtype=self.dtype)
        g["actor.w"] = h.T @ d_mean
        g["actor.b"] = d_mean.sum(axis=0)
        g["critic.w"] = h.T @ d_value[:, None]
        g["critic.b"] = np.array([d_value.sum()])
        raw = p["log_std"]
        g["log_std"] = np.where((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX), d_log_std, 0.0)

        dh = d_mean @ p["actor.w"].T + d_value[:, None] @ p["critic.w"].T
        dpre = dh * (cache["pre"] > 0)
        g["fusion.w"] = cache["z"].T @ dpre
        g["fusion.b"] = dpre.sum(axis=0)
        dz = dpre @ p["fusion.w"].T

        s = self.spec
        splits = np.cumsum([s.image_dense, s.lidar_dense, s.semantic_dense])
        d_img, d_lid, d_sem, d_pid = np.split(dz, splits, axis=1)
        obs = cache["obs"]
        for name, act, d_act, inp in (
            ("lidar", cache["lid"], d_lid, obs.lidar),
            ("semantic", cache["sem"], d_sem, obs.semantic),
            ("pid", cache["pid"], d_pid, obs.pid),
        ):
            dpre_b = d_act * (1.0 - act * act)
            g[f"{name}.w"] = inp.T @ dpre_b
            g[f"{name}.b"] = dpre_b.sum(axis=0)

        dimg_pre = d_img * (1.0 - cache["img"] ** 2)
        g["image.w"] = cache["flat"].T @ dimg_pre
        g["image.b"] = dimg_pre.sum(axis=0)
        dflat = dimg_pre @ p["image.w"].T

        c2 = cache["c2"]
        dc2_pre = dflat.reshape(c2.shape) * (1.0 - c2 * c2)
        f2 = c2.shape[-1]
        cols2 = cache["cols2"]
        g["conv2.w"] = cols2.reshape(-1, cols2.shape[-1]).T @ dc2_pre.reshape(-1, f2)
        g["conv2.b"] = dc2_pre.reshape(-1, f2).sum(axis=0)
        dcols2 = dc2_pre @ p["conv2.w"].T
        c1 = cache["c1"]
        dc1 = _conv_cols_backward(dcols2, c1.shape)

        dc1_pre = dc1 * (1.0 - c1 * c1)
        f1 = c1.shape[-1]
        cols1 = cache["cols1"]
        g["conv1.w"] = cols1.reshape(-1, cols1.shape[-1]).T @ dc1_pre.reshape(-1, f1)
        g["conv1.b"] = dc1_pre.reshape(-1, f1).sum(axis=0)
        return {n: g[n] for n in self.names}


def spec_from_config(cfg) -> NetSpec:
    pc, pp = cfg.perception, cfg.ppo
    return NetSpec(
        height=pc.height,
        width=pc.width,
        n_rays=cfg.sim.lidar_rays,
        sem_dim=cfg.semantics.dim,
        filters=tuple(pp.image_filters),
        image_dense=pp.image_dense,
        lidar_dense=pp.lidar_dense,
        semantic_dense=pp.semantic_dense,
        pid_dense=pp.pid_dense,
        fusion=pp.fusion_dense,
    )
