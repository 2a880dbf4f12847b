"""Lateral-accuracy metrics and the fixed-seed evaluation protocol."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from lanekeep import LANE_WIDTH_REF_M, PX_TO_M
from lanekeep.config import RunConfig
from lanekeep.env import LaneKeepingEnv, track_gen_config
from lanekeep.fusion import Observation, RunningNorm
from lanekeep.ppo.network import FusionNetwork
from lanekeep.ppo.train import policy_act
from lanekeep.sim.track import TrackSpec, generate_track
from lanekeep.sim.vehicle import VehicleState


@dataclass(frozen=True)
class Metrics:
    rmse: float
    std: float
    nrmse: float


def compute_metrics(offsets_px) -> Metrics:
    """RMSE about zero, Std about the mean, both in meters; nRMSE over the 5 m lane."""
    y = np.asarray(offsets_px, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("no offsets to score")
    d = y * PX_TO_M
    rmse = math.sqrt(float(np.mean(d * d)))
    std = float(np.std(d))
    return Metrics(rmse, std, rmse / LANE_WIDTH_REF_M)


@dataclass
class EvalRecord:
    trial_id: int
    seed: int
    offsets_px: np.ndarray
    rmse: float
    std: float
    nrmse: float
    length: int
    termination_cause: str
    episode_return: float

    @property
    def offsets_m(self) -> np.ndarray:
        return self.offsets_px * PX_TO_M


@dataclass
class EvalSummary:
    records: list[EvalRecord]
    pooled: Metrics
    mean_rmse: float
    mean_std: float
    mean_nrmse: float
    mean_return: float
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "n_trials": len(self.records),
            "pooled_rmse_m": self.pooled.rmse,
            "pooled_std_m": self.pooled.std,
            "pooled_nrmse": self.pooled.nrmse,
            "mean_rmse_m": self.mean_rmse,
            "mean_std_m": self.mean_std,
            "mean_nrmse": self.mean_nrmse,
            "mean_return": self.mean_return,
            **self.extra,
        }


# -- drivers -------------------------------------------------------------
Driver = Callable[[Observation, LaneKeepingEnv], tuple[float, float]]


def policy_driver(net: FusionNetwork) -> Driver:
    def act(obs, env):
        return tuple(policy_act(net, obs, deterministic=True)[0])

    return act


def random_driver(seed: int) -> Driver:
    rng = np.random.default_rng([seed, 0xD1CE])

    def act(obs, env):
        return tuple(rng.uniform(-1.0, 1.0, 2))

    return act


def centerline_action(state: VehicleState, track: TrackSpec, max_steer: float, wheelbase: float,
                      k_offset: float = 0.5, k_heading: float = 5.0) -> tuple[float, float]:
    """Ground-truth tracking law: curvature feed-forward plus offset/heading feedback.

    The heading error is driven towards -k_offset * offset, which makes the
    offset decay with time constant 1 / (v * k_offset).
    """
    v = max(state.speed, 0.5)
    kappa = track.curvature_at(state.progress)
    target_he = -k_offset * state.lateral_offset
    tan_delta = -wheelbase * kappa - wheelbase / v * k_heading * (state.heading_error - target_he)
    steer = math.atan(tan_delta)
    return (float(np.clip(steer / max_steer, -1.0, 1.0)), 0.0)


def oracle_driver() -> Driver:
    def act(obs, env):
        p = env.vparams
        return centerline_action(env.state, env.track, p.max_steering_angle, p.wheelbase)

    return act


# -- protocol ------------------------------------------------------------
def trial_seed(cfg: RunConfig, trial_id: int) -> int:
    return cfg.eval.seed + trial_id


def trial_track(cfg: RunConfig, trial_id: int, profile: str | None = None) -> TrackSpec:
    return generate_track(trial_seed(cfg, trial_id), profile or cfg.eval.profile, track_gen_config(cfg))


def frozen_norm(cfg: RunConfig, norm_state: dict | None) -> RunningNorm:
    norm = RunningNorm(cfg.semantics.dim, cfg.semantics.warmup)
    if norm_state is not None:
        norm.load_state_dict(norm_state)
    norm.warmup = norm.count  # no further statistics updates during evaluation
    return norm


def run_trial(cfg: RunConfig, trial_id: int, driver_factory: Callable[[int], Driver], norm_state: dict | None = None,
              profile: str | None = None, max_steps: int | None = None) -> EvalRecord:
    seed = trial_seed(cfg, trial_id)
    max_steps = max_steps or cfg.eval.max_steps
    run_cfg = cfg.replace(sim={"max_episode_steps": max_steps})
    env = LaneKeepingEnv(run_cfg, tracks=[trial_track(cfg, trial_id, profile)], seed=seed,
                         norm=frozen_norm(cfg, norm_state))
    driver = driver_factory(seed)
    obs = env.reset(0)
    offsets, total, cause = [], 0.0, "none"
    for _ in range(max_steps):
        obs, reward, done, info = env.step(driver(obs, env))
        offsets.append(info.dx_px)
        total += reward
        if done:
            cause = info.breakdown.termination_cause.value
            break
    y = np.array(offsets)
    m = compute_metrics(y)
    return EvalRecord(trial_id, seed, y, m.rmse, m.std, m.nrmse, len(y), cause, total)


def summarize(records: list[EvalRecord]) -> EvalSummary:
    pooled = compute_metrics(np.concatenate([r.offsets_px for r in records]))
    return EvalSummary(
        records,
        pooled,
        float(np.mean([r.rmse for r in records])),
        float(np.mean([r.std for r in records])),
        float(np.mean([r.nrmse for r in records])),
        float(np.mean([r.episode_return for r in records])),
    )


def evaluate(net: FusionNetwork | None, cfg: RunConfig, n_trials: int | None = None, norm_state: dict | None = None,
             driver: str = "policy", profile: str | None = None, max_steps: int | None = None,
             first_trial: int = 0) -> EvalSummary:
    """Runs ``n_trials`` seeded episodes; a pure function of its arguments."""
    n = cfg.eval.n_trials if n_trials is None else n_trials
    if n < 1:
        raise ValueError("n_trials must be >= 1")
    if driver == "policy":
        if net is None:
            raise ValueError("policy evaluation needs a network")
        factory = lambda seed: policy_driver(net)  # noqa: E731
    elif driver == "random":
        factory = random_driver
    elif driver == "oracle":
        factory = lambda seed: oracle_driver()  # noqa: E731
    else:
        raise ValueError(f"unknown driver {driver!r}")
    records = [run_trial(cfg, first_trial + i, factory, norm_state, profile, max_steps) for i in range(n)]
    return summarize(records)


METRIC_COLUMNS = ("trial_id", "seed", "steps", "rmse_m", "std_m", "nrmse", "episode_return", "termination")


def write_metrics_csv(summary: EvalSummary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in summary.records:
            w.writerow([r.trial_id, r.seed, r.length, repr(r.rmse), repr(r.std), repr(r.nrmse),
                        repr(float(r.episode_return)), r.termination_cause])
