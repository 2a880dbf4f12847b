"""Rollout collection, augmentation, updates, checkpoints and the training log."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from lanekeep import PX_TO_M
from lanekeep.config import RunConfig
from lanekeep.env import LaneKeepingEnv
from lanekeep.fusion import Observation, Transition, augment_buffer, augment_indices
from lanekeep.ppo.core import Adam, Batch, DivergenceError, compute_gae, normalize_advantages, old_log_probs, \
    sample_action, update
from lanekeep.ppo.network import FusionNetwork, ObsBatch, spec_from_config

CHECKPOINT_FORMAT = "lanekeep-checkpoint"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("update", "steps", "mean_return", "mean_abs_dx_m", "mean_speed", "actor_loss", "critic_loss")


@dataclass
class LogRow:
    update: int
    steps: int
    mean_return: float
    mean_abs_dx_m: float
    mean_speed: float
    actor_loss: float
    critic_loss: float


def single(obs: Observation) -> ObsBatch:
    return ObsBatch(obs.raster[None].astype(float), obs.lidar[None].astype(float), np.array([[obs.pid]], float),
                    np.asarray(obs.semantic, float)[None])


def policy_act(net: FusionNetwork, obs: Observation, rng=None, deterministic=False):
    mean, log_std, value, _ = net.forward(single(obs))
    a, logp, raw = sample_action(mean[0], log_std, rng, deterministic)
    return a, logp, raw, float(value[0])


class Trainer:
    """PPO driver. ``env`` may be any object with ``reset()`` and ``step(a)``
    returning (Observation, reward, done, info)."""

    def __init__(self, cfg: RunConfig, env=None, tracks=None):
        self.cfg = cfg
        self.env = env if env is not None else LaneKeepingEnv(cfg, tracks)
        pp = cfg.ppo
        self.net = FusionNetwork(spec_from_config(cfg), seed=cfg.seed, init_log_std=pp.init_log_std,
                                 dtype=pp.dtype)
        self.opt = Adam(lr=pp.learning_rate, eps=pp.adam_eps)
        self.act_rng = np.random.default_rng([cfg.seed, 1])
        self.shuffle_rng = np.random.default_rng([cfg.seed, 2])
        self.steps = 0
        self.updates = 0
        self.log: list[LogRow] = []
        self.obs: Observation | None = None
        self.ep_return = 0.0

    # -- rollout ---------------------------------------------------------
    def collect(self):
        env, n = self.env, self.cfg.ppo.rollout_steps
        if self.obs is None:
            self.obs = env.reset()
            self.ep_return = 0.0
        buf: list[Transition] = []
        finished, abs_dx, speeds = [], [], []
        for _ in range(n):
            a, logp, raw, value = policy_act(self.net, self.obs, self.act_rng)
            scene = getattr(env, "scene", None)
            next_obs, reward, done, info = env.step(a)
            buf.append(Transition(self.obs, (float(raw[0]), float(raw[1])), float(reward), next_obs, bool(done),
                                  logp, value, scene, getattr(info, "scene", None)))
            self.ep_return += reward
            abs_dx.append(abs(getattr(info, "dx_px", 0.0)) * PX_TO_M)
            state = getattr(info, "state", None)
            speeds.append(state.speed_kmh if state is not None else 0.0)
            if done:
                finished.append(self.ep_return)
                self.obs = env.reset()
                self.ep_return = 0.0
            else:
                self.obs = next_obs
            self.steps += 1
        last_value = 0.0 if buf[-1].done else policy_act(self.net, self.obs, deterministic=True)[3]
        mean_return = float(np.mean(finished)) if finished else float(self.ep_return)
        return buf, last_value, {"mean_return": mean_return, "mean_abs_dx_m": float(np.mean(abs_dx)),
                                 "mean_speed": float(np.mean(speeds))}

    def build_batch(self, buf: list[Transition], last_value: float) -> Batch:
        pp = self.cfg.ppo
        adv, ret = compute_gae([t.reward for t in buf], [t.value for t in buf], [t.done for t in buf], last_value,
                               pp.gamma, pp.gae_lambda)
        regen = bool(getattr(self.cfg.semantics, "regenerate_tokens", False))
        token_fn = getattr(self.env, "token_fn", None)
        full = augment_buffer(buf, pp.augment, pp.t_aug, regen, token_fn)
        # mirrors inherit the advantage and return of their source transition
        src = list(range(len(buf))) + augment_indices(len(buf), pp.augment, pp.t_aug)
        obs = ObsBatch.stack([t.obs for t in full], self.net.dtype)
        actions = np.array([t.action for t in full], dtype=float)
        old = old_log_probs(self.net, obs, actions)
        return Batch(obs, actions, old, normalize_advantages(adv[src]), ret[src])

    def iteration(self) -> LogRow:
        buf, last_value, stats = self.collect()
        batch = self.build_batch(buf, last_value)
        pp = self.cfg.ppo
        m = update(self.net, self.opt, batch, self.shuffle_rng, epochs=pp.epochs, batch_size=pp.batch_size,
                   eps=pp.clip_eps, value_coef=pp.value_coef, entropy_coef=pp.entropy_coef,
                   grad_clip=pp.grad_clip)
        self.updates += 1
        row = LogRow(self.updates, self.steps, stats["mean_return"], stats["mean_abs_dx_m"], stats["mean_speed"],
                     m["actor_loss"], m["critic_loss"])
        self.log.append(row)
        return row

    def run(self, out_dir: str | None = None, progress=None) -> list[LogRow]:
        total = self.cfg.ppo.total_steps
        while self.steps + self.cfg.ppo.rollout_steps <= total:
            try:
                row = self.iteration()
            except FloatingPointError as exc:
                raise DivergenceError(str(exc)) from exc
            if out_dir is not None:
                self.save(out_dir)
            if progress is not None:
                progress(row)
        return self.log

    # -- persistence -----------------------------------------------------
    def checkpoint(self) -> dict:
        names = self.net.names
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "step": self.steps,
            "update": self.updates,
            "param_names": names,
            "param_shapes": [list(self.net.params[n].shape) for n in names],
            "params": [self.net.params[n].ravel().tolist() for n in names],
            "adam": self.opt.state_dict(names),
            "rng": {"act": self.act_rng.bit_generator.state, "shuffle": self.shuffle_rng.bit_generator.state},
            "env": self.env.state_dict() if hasattr(self.env, "state_dict") else None,
            "trainer": {
                "ep_return": self.ep_return,
                "log": [asdict(r) for r in self.log],
                "has_obs": self.obs is not None,
            },
        }

    def save(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        write_checkpoint(os.path.join(out_dir, "checkpoint.json"), self.checkpoint())
        with open(os.path.join(out_dir, "training_log.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(log_csv(self.log))

    def restore(self, ckpt: dict) -> None:
        load_params(self.net, ckpt)
        self.opt.load_state_dict(ckpt["adam"], self.net.params, self.net.names)
        self.act_rng.bit_generator.state = ckpt["rng"]["act"]
        self.shuffle_rng.bit_generator.state = ckpt["rng"]["shuffle"]
        if ckpt["env"] is not None:
            self.env.load_state_dict(ckpt["env"])
        tr = ckpt["trainer"]
        self.ep_return = tr["ep_return"]
        self.log = [LogRow(**r) for r in tr["log"]]
        self.obs = self.env.obs if tr["has_obs"] else None
        self.steps, self.updates = ckpt["step"], ckpt["update"]


def log_csv(rows: list[LogRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r.update, r.steps] + [repr(float(getattr(r, c))) for c in LOG_COLUMNS[2:]])
    return out.getvalue()


def write_checkpoint(path: str, ckpt: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(ckpt, fh, separators=(",", ":"))
    os.replace(tmp, path)


class CheckpointError(ValueError):
    pass


def read_checkpoint(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            ckpt = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {ckpt.get('version')}")
    return ckpt


def load_params(net: FusionNetwork, ckpt: dict) -> None:
    names = net.names
    if ckpt["param_names"] != names:
        raise CheckpointError("checkpoint parameter layout does not match the network")
    for n, shape, values in zip(names, ckpt["param_shapes"], ckpt["params"]):
        if tuple(shape) != net.params[n].shape:
            raise CheckpointError(f"shape mismatch for {n}: {shape} vs {net.params[n].shape}")
        net.params[n] = np.array(values, dtype=net.dtype).reshape(shape)


def network_from_checkpoint(ckpt: dict, cfg: RunConfig | None = None) -> tuple[FusionNetwork, RunConfig]:
    cfg = cfg or RunConfig.from_dict(ckpt["config"])
    net = FusionNetwork(spec_from_config(cfg), dtype=cfg.ppo.dtype)
    load_params(net, ckpt)
    return net, cfg


def train(cfg: RunConfig, out_dir: str | None = None, resume: dict | None = None, env=None, progress=None):
    trainer = Trainer(cfg, env=env)
    if resume is not None:
        trainer.restore(resume)
    log = trainer.run(out_dir, progress)
    return trainer.net, log, trainer
