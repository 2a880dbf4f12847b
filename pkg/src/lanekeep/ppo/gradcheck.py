"""Central finite-difference check of the analytic PPO loss gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lanekeep.ppo.core import Batch, gaussian_log_prob, ppo_losses
from lanekeep.ppo.network import FusionNetwork, NetSpec, ObsBatch

# 8x8 raster, 16 rays, 8-dim semantics; narrow branches keep the
# per-parameter loop fast
MINI_SPEC = NetSpec(height=8, width=8, n_rays=16, sem_dim=8, filters=(4, 8), image_dense=8, lidar_dense=8,
                    semantic_dense=8, pid_dense=4, fusion=16)

KINK_MARGIN = 1e-3


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst_param: str
    n_params: int
    n_batches: int
    redraws: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4


def random_batch(spec: NetSpec, net: FusionNetwork, rng: np.random.Generator, size: int = 4) -> Batch:
    obs = ObsBatch(
        rng.uniform(0.0, 1.0, (size, spec.height, spec.width)),
        rng.uniform(0.0, 1.0, (size, spec.n_rays)),
        rng.uniform(-1.0, 1.0, (size, 1)),
        rng.normal(0.0, 1.0, (size, spec.sem_dim)),
    )
    mean, log_std, _, _ = net.forward(obs)
    actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    # perturb the old log-probs so some ratios land outside the clip range
    old = gaussian_log_prob(actions, mean, log_std) + rng.normal(0.0, 0.3, size)
    return Batch(obs, actions, old, rng.normal(0.0, 1.0, size), rng.normal(0.0, 1.0, size))


def near_kink(net: FusionNetwork, batch: Batch, eps: float) -> bool:
    """True if a ReLU input or a policy ratio sits within KINK_MARGIN of a nondifferentiable point."""
    _, _, _, cache = net.forward(batch.obs, keep=True)
    if np.any(np.abs(cache["pre"]) < KINK_MARGIN):
        return True
    mean, log_std = net.forward(batch.obs)[:2]
    ratio = np.exp(gaussian_log_prob(batch.actions, mean, log_std) - batch.old_log_prob)
    return bool(np.any(np.minimum(np.abs(ratio - 1.0 - eps), np.abs(ratio - 1.0 + eps)) < KINK_MARGIN))


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def gradcheck(seed: int = 0, n_batches: int = 10, h: float = 1e-5, spec: NetSpec = MINI_SPEC, eps: float = 0.2,
              value_coef: float = 0.5, entropy_coef: float = 0.01) -> GradcheckResult:
    rng = np.random.default_rng([seed, 0x6C])
    worst, worst_name, redraws = 0.0, "", 0
    net = None
    for _ in range(n_batches):
        while True:
            net = FusionNetwork(spec, seed=int(rng.integers(2**31)), init_log_std=float(rng.uniform(-1.0, 0.5)))
            # nonzero actor weights so every branch receives gradient
            net.params["actor.w"] = rng.normal(0.0, 0.3, net.params["actor.w"].shape)
            for k in ("actor.b", "critic.b", "fusion.b"):
                net.params[k] = rng.normal(0.0, 0.1, net.params[k].shape)
            batch = random_batch(spec, net, rng)
            if not near_kink(net, batch, eps):
                break
            redraws += 1
        analytic = ppo_losses(net, batch, eps, value_coef, entropy_coef, with_grad=True).grads
        theta = net.flat()
        numeric = np.empty_like(theta)
        for i in range(len(theta)):
            old = theta[i]
            theta[i] = old + h
            net.set_flat(theta)
            fp = ppo_losses(net, batch, eps, value_coef, entropy_coef).total
            theta[i] = old - h
            net.set_flat(theta)
            fm = ppo_losses(net, batch, eps, value_coef, entropy_coef).total
            theta[i] = old
            numeric[i] = (fp - fm) / (2.0 * h)
        net.set_flat(theta)
        a_flat = np.concatenate([analytic[n].ravel() for n in net.names])
        err = rel_error(a_flat, numeric)
        j = int(np.argmax(err))
        if err[j] > worst:
            worst = float(err[j])
            worst_name = _param_at(net, j)
    return GradcheckResult(worst, worst_name, net.n_params(), n_batches, redraws)


def _param_at(net: FusionNetwork, j: int) -> str:
    for name in net.names:
        size = net.params[name].size
        if j < size:
            return f"{name}[{j}]"
        j -= size
    return "?"
