import math

import numpy as np
import pytest
from fakes import RAYS, SEM, BanditEnv, SymmetricBanditEnv, centered_mean_action, tiny_config
from hypothesis import given
from hypothesis import strategies as st
from oracles import gae_series

import lanekeep.ppo.core as core
from lanekeep.config import RunConfig
from lanekeep.ppo.core import (
    Adam,
    Batch,
    DivergenceError,
    clip_grads,
    clipped_surrogate,
    compute_gae,
    gaussian_log_prob,
    global_norm,
    normalize_advantages,
    old_log_probs,
    ppo_losses,
    sample_action,
    update,
)
from lanekeep.ppo.gradcheck import MINI_SPEC, gradcheck, random_batch
from lanekeep.ppo.network import FusionNetwork, NetSpec, ObsBatch
from lanekeep.ppo.train import Trainer


def obs_batch(spec, rng, n):
    return ObsBatch(rng.uniform(0, 1, (n, spec.height, spec.width)), rng.uniform(0, 1, (n, spec.n_rays)),
                    rng.uniform(-1, 1, (n, 1)), rng.normal(0, 1, (n, spec.sem_dim)))


def naive_forward(params, spec, raster, lidar, pid, sem):
    """Single-sample forward pass written with explicit output loops."""
    def conv(x, w, b):
        h, wd, c = x.shape
        f = w.shape[1]
        k = w.reshape(3, 3, c, f)
        ho, wo = (h - 3) // 2 + 1, (wd - 3) // 2 + 1
        out = np.empty((ho, wo, f))
        for i in range(ho):
            for j in range(wo):
                patch = x[2 * i : 2 * i + 3, 2 * j : 2 * j + 3, :]
                out[i, j] = np.tanh(np.einsum("abc,abcf->f", patch, k) + b)
        return out

    p = params
    c1 = conv(raster[:, :, None], p["conv1.w"], p["conv1.b"])
    c2 = conv(c1, p["conv2.w"], p["conv2.b"])
    img = np.tanh(c2.ravel() @ p["image.w"] + p["image.b"])
    z = np.concatenate([img, np.tanh(lidar @ p["lidar.w"] + p["lidar.b"]),
                        np.tanh(sem @ p["semantic.w"] + p["semantic.b"]),
                        np.tanh(np.array([pid]) @ p["pid.w"] + p["pid.b"])])
    h = np.maximum(z @ p["fusion.w"] + p["fusion.b"], 0.0)
    return h @ p["actor.w"] + p["actor.b"], float((h @ p["critic.w"] + p["critic.b"])[0])


# -- network -----------------------------------------------------------------
@pytest.mark.parametrize("spec", [MINI_SPEC, NetSpec()], ids=["mini", "default"])
def test_forward_matches_naive_oracle(spec, rng):
    net = FusionNetwork(spec, seed=3)
    for k in ("actor.b", "critic.b", "fusion.b", "conv1.b", "image.b"):
        net.params[k] = rng.normal(0, 0.2, net.params[k].shape)
    obs = obs_batch(spec, rng, 3)
    mean, log_std, value, _ = net.forward(obs)
    for i in range(3):
        m, v = naive_forward(net.params, spec, obs.raster[i], obs.lidar[i], obs.pid[i, 0], obs.semantic[i])
        assert abs(value[i] - v) < 1e-10
        assert np.max(np.abs(mean[i] - m)) < 1e-10


def test_output_shapes_and_determinism(rng):
    obs = obs_batch(NetSpec(), rng, 1)
    a, b = FusionNetwork(NetSpec(), seed=5), FusionNetwork(NetSpec(), seed=5)
    mean, log_std, value, _ = a.forward(obs)
    assert (mean.shape, log_std.shape, value.shape) == ((1, 2), (2,), (1,))
    m2, l2, v2, _ = b.forward(obs)
    assert np.array_equal(mean, m2) and np.array_equal(value, v2)


def test_parameter_layout():
    net = FusionNetwork(NetSpec(), seed=0)
    assert net.names == ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "image.w", "image.b", "lidar.w", "lidar.b",
                         "semantic.w", "semantic.b", "pid.w", "pid.b", "fusion.w", "fusion.b", "actor.w", "actor.b",
                         "log_std", "critic.w", "critic.b"]
    assert net.params["fusion.w"].shape == (64 + 32 + 32 + 8, 128)
    assert net.params["actor.w"].shape == (128, 2)
    assert np.array_equal(net.params["log_std"], [-0.5, -0.5])
    v = net.flat()
    assert len(v) == net.n_params()
    other = FusionNetwork(NetSpec(), seed=1)
    other.set_flat(v)
    assert all(np.array_equal(net.params[n], other.params[n]) for n in net.names)


def test_log_std_is_clamped():
    net = FusionNetwork(MINI_SPEC, seed=0)
    net.params["log_std"] = np.array([-9.0, 7.0])
    assert np.array_equal(net.log_std(), [-5.0, 2.0])


def test_float32_forward_close_to_float64(rng):
    obs = obs_batch(NetSpec(), rng, 4)
    a = FusionNetwork(NetSpec(), seed=2)
    b = FusionNetwork(NetSpec(), seed=2, dtype=np.float32)
    assert np.allclose(a.forward(obs)[2], b.forward(obs)[2], atol=1e-4)


# -- policy ------------------------------------------------------------------
def test_minimal_std_samples_stay_near_mean():
    rng = np.random.default_rng(0)
    mean = np.array([0.2, -0.3])
    d = np.array([np.abs(sample_action(mean, np.array([-5.0, -5.0]), rng)[2] - mean).max() for _ in range(2000)])
    assert np.mean(d < 0.03) > 0.99


def test_log_prob_at_mean_unit_std():
    _, logp, _ = sample_action(np.zeros(2), np.zeros(2), deterministic=True)
    assert logp == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
    assert logp == pytest.approx(-1.8379, abs=1e-4)


def test_deterministic_mode_returns_mean():
    a, _, raw = sample_action(np.array([0.3, -0.2]), np.zeros(2), deterministic=True)
    assert list(a) == [0.3, -0.2] and list(raw) == [0.3, -0.2]


def test_execution_clips_but_log_prob_uses_raw():
    rng = np.random.default_rng(1)
    a, logp, raw = sample_action(np.array([0.95, 0.0]), np.array([1.0, 1.0]), rng)
    assert np.all(np.abs(a) <= 1.0)
    assert logp == pytest.approx(float(gaussian_log_prob(raw, np.array([0.95, 0.0]), np.ones(2))))


# -- GAE ---------------------------------------------------------------------
def test_gae_terminal_step():
    adv, ret = compute_gae([2.0], [0.5], [True], 9.0)
    assert adv[0] == 1.5 and ret[0] == 2.0


def test_gae_hand_recursion():
    adv, ret = compute_gae([1.0, 1.0], [0.5, 0.5], [False, False], 0.5, 0.99, 0.95)
    assert adv == pytest.approx([0.995 + 0.9405 * 0.995, 0.995], abs=1e-12)
    assert adv[0] == pytest.approx(1.93080, abs=1e-5)
    assert ret == pytest.approx(adv + 0.5)


@given(st.integers(0, 10_000))
def test_gae_matches_series(seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=50), rng.normal(size=50)
    d = rng.uniform(size=50) < 0.1
    lv = float(rng.normal())
    adv, _ = compute_gae(r, v, d, lv, 0.99, 0.95)
    assert np.max(np.abs(adv - gae_series(r, v, d, lv, 0.99, 0.95))) < 1e-10


def test_gae_rejects_misaligned():
    with pytest.raises(ValueError):
        compute_gae([1.0, 2.0], [0.0], [False, False], 0.0)


def test_normalized_advantages():
    a = normalize_advantages(np.array([1.0, 2.0, 3.0, 4.0]))
    assert abs(a.mean()) < 1e-12 and a.std() == pytest.approx(1.0, abs=1e-6)


# -- losses ------------------------------------------------------------------
def test_surrogate_examples():
    assert clipped_surrogate(np.array([1.3]), np.array([1.0]), 0.2)[0] == pytest.approx(1.2)
    assert clipped_surrogate(np.array([0.7]), np.array([-1.0]), 0.2)[0] == pytest.approx(-0.8)


@given(st.integers(0, 10_000))
def test_surrogate_bounds(seed):
    rng = np.random.default_rng(seed)
    ratio, adv = np.exp(rng.normal(0, 0.5, 64)), rng.normal(size=64)
    s = clipped_surrogate(ratio, adv, 0.2)
    assert np.all(s <= ratio * adv) and np.all(s <= np.clip(ratio, 0.8, 1.2) * adv)


def identity_batch(net, rng, n=16):
    spec = net.spec
    obs = obs_batch(spec, rng, n)
    mean, log_std, _, _ = net.forward(obs)
    actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return Batch(obs, actions, old_log_probs(net, obs, actions), rng.normal(size=n), rng.normal(size=n))


def test_unit_ratio_surrogate_is_mean_advantage(rng):
    net = FusionNetwork(MINI_SPEC, seed=0)
    b = identity_batch(net, rng)
    res = ppo_losses(net, b)
    assert res.stats["ratio_mean"] == pytest.approx(1.0, abs=1e-12)
    assert res.actor_loss == pytest.approx(-b.advantages.mean(), abs=1e-12)
    assert res.critic_loss == pytest.approx(np.mean((net.forward(b.obs)[2] - b.returns) ** 2))


def test_gradients_match_finite_differences():
    res = gradcheck(seed=1, n_batches=2)
    assert res.passed, res
    assert res.n_params == FusionNetwork(MINI_SPEC).n_params()


def test_non_finite_loss_aborts(rng):
    net = FusionNetwork(MINI_SPEC, seed=0)
    b = identity_batch(net, rng, 4)
    b.returns[0] = np.inf
    with pytest.raises(DivergenceError):
        ppo_losses(net, b)


def test_divergence_guard(monkeypatch, rng):
    net = FusionNetwork(MINI_SPEC, seed=0)
    b = identity_batch(net, rng, 8)
    b.returns[:] = 1e3
    monkeypatch.setattr(core, "DIVERGENCE_LIMIT", 10.0)
    with pytest.raises(DivergenceError):
        update(net, Adam(), b, np.random.default_rng(0), epochs=1, batch_size=8)


# -- optimizer ---------------------------------------------------------------
def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0])}
    Adam(lr=0.1, eps=0.0).step(params, {"w": np.array([3.0, -0.5])})
    assert params["w"] == pytest.approx([0.9, -1.9])


def test_adam_two_steps_by_hand():
    opt = Adam(lr=0.01, eps=1e-5)
    params = {"w": np.array([0.0])}
    opt.step(params, {"w": np.array([1.0])})
    opt.step(params, {"w": np.array([3.0])})
    m = 0.9 * 0.1 + 0.1 * 3.0
    v = 0.999 * 0.001 + 0.001 * 9.0
    step2 = 0.01 * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999**2)) + 1e-5)
    step1 = 0.01 * 1.0 / (1.0 + 1e-5)
    assert params["w"][0] == pytest.approx(-step1 - step2, abs=1e-15)


def test_global_norm_clipping():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_grads(g, 0.5)
    assert norm == 5.0 and global_norm(clipped) == pytest.approx(0.5)
    same, _ = clip_grads({"a": np.array([0.1])}, 0.5)
    assert same["a"][0] == 0.1


# -- update ------------------------------------------------------------------
def test_zero_advantage_leaves_actor_unchanged(rng):
    net = FusionNetwork(MINI_SPEC, seed=0)
    b = identity_batch(net, rng, 32)
    b.advantages[:] = 0.0
    before = {k: v.copy() for k, v in net.params.items()}
    update(net, Adam(lr=1e-2), b, np.random.default_rng(0), epochs=3, batch_size=8)
    for k in ("actor.w", "actor.b", "log_std"):
        assert np.array_equal(net.params[k], before[k])
    assert not np.array_equal(net.params["critic.w"], before["critic.w"])


def test_update_is_bit_identical(rng):
    base = FusionNetwork(MINI_SPEC, seed=4)
    b = identity_batch(base, rng, 32)
    outs = []
    for _ in range(2):
        net = base.copy()
        update(net, Adam(), b, np.random.default_rng(11), epochs=3, batch_size=8)
        outs.append(net.flat())
    assert np.array_equal(outs[0], outs[1])


def test_old_log_probs_frozen_during_update(rng):
    net = FusionNetwork(MINI_SPEC, seed=4)
    b = identity_batch(net, rng, 32)
    frozen = b.old_log_prob.copy()
    snapshot = net.copy()
    update(net, Adam(lr=1e-2), b, np.random.default_rng(0), epochs=2, batch_size=8)
    assert np.array_equal(b.old_log_prob, frozen)
    assert np.array_equal(old_log_probs(snapshot, b.obs, b.actions), frozen)
    # a different chunking only changes BLAS summation order
    assert np.allclose(old_log_probs(snapshot, b.obs, b.actions, chunk=7), frozen, rtol=0, atol=1e-12)


def test_two_updates_for_4096_steps():
    cfg = tiny_config(rollout_steps=2048, total_steps=4096, epochs=1)
    t = Trainer(cfg, env=BanditEnv())
    log = t.run()
    assert t.updates == 2 and len(log) == 2 and t.steps == 4096
    assert [r.steps for r in log] == [2048, 4096]


def test_calibration_task():
    cfg = tiny_config(learning_rate=1e-2, epochs=10, rollout_steps=256, total_steps=50 * 256, augment="off")
    t = Trainer(cfg, env=BanditEnv())
    t.net.params["actor.b"][0] = 0.5  # start away from the optimum
    t.run()
    assert t.updates == 50
    buf, _, _ = t.collect()
    assert np.mean([abs(np.clip(x.action[0], -1, 1)) for x in buf]) < 0.1


def test_mirror_augmented_policy_is_centred():
    rows = []
    for seed in range(5):
        d = tiny_config(learning_rate=3e-3, total_steps=30 * 256, augment="every_step").to_dict()
        d["seed"] = seed
        env = SymmetricBanditEnv(seed)
        t = Trainer(RunConfig.from_dict(d), env=env)
        t.net.params["actor.b"][0] = 0.3
        t.run()
        rows.append(abs(centered_mean_action(t.net, env)))
    assert np.median(rows) < 0.05


def test_tiny_config_shapes():
    cfg = tiny_config()
    assert (cfg.sim.lidar_rays, cfg.semantics.dim) == (RAYS, SEM)
    net = Trainer(cfg, env=BanditEnv()).net
    b = random_batch(net.spec, net, np.random.default_rng(0))
    assert net.forward(b.obs)[0].shape == (4, 2)
