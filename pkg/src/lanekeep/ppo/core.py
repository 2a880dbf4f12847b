"""Gaussian policy, GAE, clipped-surrogate losses and the minibatch update."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lanekeep.ppo.network import FusionNetwork, ObsBatch

LOG_2PI = math.log(2.0 * math.pi)
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """Raised when an update produces a non-finite or exploding loss."""


def gaussian_log_prob(a: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (a - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z + 2.0 * log_std + LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(0.5 + 0.5 * LOG_2PI + log_std))


def sample_action(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator | None = None,
                  deterministic: bool = False):
    """Returns (executed action clipped to [-1, 1], log-prob of the raw sample, raw sample).

    In deterministic mode the raw sample is the mean itself.
    """
    mean = np.asarray(mean, dtype=float)
    log_std = np.asarray(log_std, dtype=float)
    if deterministic:
        raw = mean.copy()
    else:
        raw = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return np.clip(raw, -1.0, 1.0), float(gaussian_log_prob(raw, mean, log_std)), raw


def compute_gae(rewards, values, dones, last_value: float, gamma: float = 0.99, lam: float = 0.95):
    """Backward recursion; a done at t cuts both bootstrap and trace."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("rewards, values and dones must be aligned")
    n = len(rewards)
    adv = np.zeros(n)
    next_value, next_adv = float(last_value), 0.0
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class Batch:
    obs: ObsBatch
    actions: np.ndarray  # (B, 2) raw samples
    old_log_prob: np.ndarray  # (B,)
    advantages: np.ndarray  # (B,)
    returns: np.ndarray  # (B,)

    def __len__(self):
        return len(self.actions)

    def take(self, idx) -> "Batch":
        return Batch(self.obs.take(idx), self.actions[idx], self.old_log_prob[idx], self.advantages[idx],
                     self.returns[idx])


@dataclass
class LossResult:
    actor_loss: float
    critic_loss: float
    entropy: float
    total: float
    stats: dict
    grads: dict | None = None


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, eps: float) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def ppo_losses(net: FusionNetwork, batch: Batch, eps: float = 0.2, value_coef: float = 0.5,
               entropy_coef: float = 0.0, with_grad: bool = False) -> LossResult:
    """total = actor_loss + value_coef * critic_loss - entropy_coef * entropy."""
    mean, log_std, value, cache = net.forward(batch.obs, keep=with_grad)
    b = len(batch)
    logp = gaussian_log_prob(batch.actions, mean, log_std)
    ratio = np.exp(logp - batch.old_log_prob)
    adv = batch.advantages
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    actor_loss = -float(np.mean(np.minimum(surr1, surr2)))
    err = value - batch.returns
    critic_loss = float(np.mean(err * err))
    entropy = gaussian_entropy(log_std)
    total = actor_loss + value_coef * critic_loss - entropy_coef * entropy
    if not np.isfinite(total):
        raise DivergenceError(f"non-finite loss (actor {actor_loss}, critic {critic_loss})")
    stats = {
        "ratio_mean": float(ratio.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > eps)),
        "approx_kl": float(np.mean(batch.old_log_prob - logp)),
    }
    grads = None
    if with_grad:
        # the unclipped branch carries the gradient whenever it is the minimum
        d_logp = -(adv * ratio * (surr1 <= surr2)) / b
        var_inv = np.exp(-2.0 * log_std)
        diff = batch.actions - mean
        d_mean = d_logp[:, None] * diff * var_inv
        d_log_std = np.sum(d_logp[:, None] * (diff * diff * var_inv - 1.0), axis=0) - entropy_coef
        d_value = value_coef * 2.0 * err / b
        grads = net.backward(cache, d_mean, d_log_std, d_value)
    return LossResult(actor_loss, critic_loss, entropy, total, stats, grads)


def global_norm(grads: dict) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grads(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


@dataclass
class Adam:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-5
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * m + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self, order: list[str]) -> dict:
        return {
            "t": self.t,
            "m": [self.m[k].ravel().tolist() for k in order] if self.m else [],
            "v": [self.v[k].ravel().tolist() for k in order] if self.v else [],
        }

    def load_state_dict(self, d: dict, params: dict, order: list[str]) -> None:
        self.t = int(d["t"])
        self.m, self.v = {}, {}
        for k, m, v in zip(order, d["m"], d["v"]):
            shape = params[k].shape
            self.m[k] = np.array(m, dtype=params[k].dtype).reshape(shape)
            self.v[k] = np.array(v, dtype=params[k].dtype).reshape(shape)


def old_log_probs(net: FusionNetwork, obs: ObsBatch, actions: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty(len(actions))
    for i in range(0, len(actions), chunk):
        mean, log_std, _, _ = net.forward(obs.take(slice(i, i + chunk)))
        out[i : i + chunk] = gaussian_log_prob(actions[i : i + chunk], mean, log_std)
    return out


def update(net: FusionNetwork, opt: Adam, batch: Batch, rng: np.random.Generator, *, epochs: int = 10,
           batch_size: int = 64, eps: float = 0.2, value_coef: float = 0.5, entropy_coef: float = 0.0,
           grad_clip: float = 0.5) -> dict:
    """Epochs of shuffled minibatch Adam steps; returns mean losses over the last epoch."""
    n = len(batch)
    last: list[LossResult] = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        last = []
        for i in range(0, n, batch_size):
            mb = batch.take(perm[i : i + batch_size])
            res = ppo_losses(net, mb, eps, value_coef, entropy_coef, with_grad=True)
            if res.critic_loss > DIVERGENCE_LIMIT:
                raise DivergenceError(f"critic loss {res.critic_loss:.3g} exceeds {DIVERGENCE_LIMIT:g}")
            grads, _ = clip_grads(res.grads, grad_clip)
            opt.step(net.params, grads)
            last.append(res)
    return {
        "actor_loss": float(np.mean([r.actor_loss for r in last])),
        "critic_loss": float(np.mean([r.critic_loss for r in last])),
        "entropy": float(np.mean([r.entropy for r in last])),
        "clip_frac": float(np.mean([r.stats["clip_frac"] for r in last])),
        "approx_kl": float(np.mean([r.stats["approx_kl"] for r in last])),
    }
