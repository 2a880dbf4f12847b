"""Command-line entry point.

Exit codes: 0 success, 1 failed check, 2 configuration/usage error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from lanekeep.config import VARIANTS, ConfigError, RunConfig

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    d = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "out", None):
        d["output_dir"] = args.out
    return RunConfig.from_dict(d)


def _tracks(args):
    if not getattr(args, "tracks", None):
        return None
    from lanekeep.sim.track import load_tracks

    try:
        tracks = load_tracks(args.tracks)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load tracks from {args.tracks}: {exc}") from exc
    if not tracks:
        raise ConfigError("track file is empty")
    return tracks


def _checkpoint(path):
    from lanekeep.ppo.train import CheckpointError, read_checkpoint

    if not path:
        raise ConfigError("a checkpoint is required (--checkpoint PATH)")
    try:
        return read_checkpoint(path)
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc


# -- subcommands -----------------------------------------------------------
def cmd_train(args) -> int:
    from lanekeep.ppo.train import Trainer

    cfg = _load_config(args)
    resume = _checkpoint(args.resume) if args.resume else None
    if resume is not None:
        saved = RunConfig.from_dict(resume["config"])
        a, b = saved.to_dict(), cfg.to_dict()
        for d in (a, b):
            d["ppo"].pop("total_steps")
            d.pop("output_dir")
        if args.config and a != b:
            raise ConfigError("config differs from the checkpoint being resumed")
        if not args.config:
            cfg = RunConfig.from_dict({**saved.to_dict(), "output_dir": cfg.output_dir})
    trainer = Trainer(cfg, tracks=_tracks(args))
    if resume is not None:
        trainer.restore(resume)

    def progress(row):
        if not args.quiet:
            print(f"update {row.update:4d}  steps {row.steps:7d}  return {row.mean_return:9.3f}  "
                  f"|dx| {row.mean_abs_dx_m:6.3f} m  actor {row.actor_loss:+.4f}  critic {row.critic_loss:.4f}",
                  flush=True)

    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=1)
    trainer.run(cfg.output_dir, progress)
    trainer.save(cfg.output_dir)
    print(f"wrote {os.path.join(cfg.output_dir, 'checkpoint.json')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from lanekeep.harness.evaluate import evaluate, write_metrics_csv
    from lanekeep.ppo.train import CheckpointError, network_from_checkpoint

    ckpt = _checkpoint(args.checkpoint)
    cfg = _load_config(args) if args.config else RunConfig.from_dict(ckpt["config"])
    if args.seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "eval": {**cfg.to_dict()["eval"], "seed": args.seed}})
    try:
        net, _ = network_from_checkpoint(ckpt, cfg)
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc
    norm = (ckpt.get("env") or {}).get("norm")
    summary = evaluate(net, cfg, args.trials, norm_state=norm, driver=args.driver)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    write_metrics_csv(summary, os.path.join(out, "metrics.csv"))
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary.as_dict(), fh, indent=1)
    print(json.dumps(summary.as_dict(), indent=1))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from lanekeep.harness.ablation import comparison_table, run_ablation

    cfg = _load_config(args)
    variants = args.variants or list(VARIANTS)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; choose from {list(VARIANTS)}")
    base = cfg.seed
    seeds = [base + i for i in range(args.seeds)]
    runs = run_ablation(cfg, variants, seeds, args.trials, cfg.output_dir,
                        progress=lambda r: print(f"{r.variant:<20} seed {r.seed}: rmse {r.rmse:.4f} m", flush=True))
    print(comparison_table(runs))
    return EXIT_OK


def cmd_rollout(args) -> int:
    from lanekeep.env import LaneKeepingEnv
    from lanekeep.fusion import Transition, dump_jsonl
    from lanekeep.harness.evaluate import oracle_driver, policy_driver, random_driver
    from lanekeep.ppo.train import network_from_checkpoint

    if args.checkpoint:
        ckpt = _checkpoint(args.checkpoint)
        cfg = _load_config(args) if args.config else RunConfig.from_dict(ckpt["config"])
        net, _ = network_from_checkpoint(ckpt, cfg)
        norm_state = (ckpt.get("env") or {}).get("norm")
    elif args.driver == "policy":
        raise ConfigError("rollout with the policy driver needs --checkpoint")
    else:
        cfg, net, norm_state = _load_config(args), None, None
    env = LaneKeepingEnv(cfg, tracks=_tracks(args))
    if norm_state is not None:
        env.norm.load_state_dict(norm_state)
    driver = {"policy": lambda: policy_driver(net), "oracle": oracle_driver,
              "random": lambda: random_driver(cfg.seed)}[args.driver]()
    obs = env.reset()
    steps = args.steps or cfg.sim.max_episode_steps
    buf = []
    for _ in range(steps):
        scene = env.scene
        a = driver(obs, env)
        nxt, r, done, info = env.step(a)
        buf.append(Transition(obs, (float(a[0]), float(a[1])), r, nxt, done, 0.0, 0.0, scene, info.scene))
        obs = nxt
        if done:
            break
    path = args.out_file or os.path.join(cfg.output_dir, "rollout.jsonl")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    n = dump_jsonl(buf, path, full=args.dump_full)
    print(f"wrote {n} transitions to {path}")
    return EXIT_OK


def cmd_reward_table(args) -> int:
    from lanekeep.env import reward_params
    from lanekeep.reward import r_center, r_lane, r_lidar, r_speed

    p = reward_params(_load_config(args))
    print("d_min_m,r_lidar")
    for d in (1.0, 2.0, 2.5, 2.8, 3.0, 3.5, 4.0, 6.0, 8.0, 9.0, 10.0, 11.0):
        print(f"{d},{r_lidar(d, p)!r}")
    print()
    print("dx_px,r_lane,r_center")
    for dx in (0.0, 10.0, 25.0, 50.0, 80.0, 85.0, 100.0):
        print(f"{dx},{r_lane(dx, p)!r},{r_center(dx, p)!r}")
    print()
    print("v_kmh,r_speed")
    for v in (0.0, 10.0, 20.0, 30.0, 40.0):
        print(f"{v},{r_speed(v, p)!r}")
    return EXIT_OK


def _pose(args, cfg):
    from lanekeep.env import track_gen_config
    from lanekeep.sim.track import generate_track
    from lanekeep.sim.vehicle import VehicleState, locate

    track = generate_track(args.track_seed if args.track_seed is not None else cfg.sim.track_seed,
                           args.profile or cfg.sim.track_profile, track_gen_config(cfg))
    x, y, h = track.pose_at(args.s)
    # + offset = right of the centerline
    x, y = x + args.offset * np.sin(h), y - args.offset * np.cos(h)
    lat, he, prog = locate(track, x, y, h)
    speed = cfg.sim.start_speed_kmh / 3.6
    return VehicleState(x, y, h, speed, lat, he, prog), track


def cmd_inspect_raster(args) -> int:
    from lanekeep import PX_TO_M
    from lanekeep.env import LaneKeepingEnv
    from lanekeep.perception import hough_lane_offset, render_raster, write_pgm

    cfg = _load_config(args)
    state, track = _pose(args, cfg)
    env = LaneKeepingEnv(cfg, tracks=[track])
    raster = render_raster(state, track, env.size, env.camera)
    est = hough_lane_offset(raster)
    print(f"s={state.progress:.2f} m  true offset {state.lateral_offset:+.3f} m "
          f"({state.lateral_offset / PX_TO_M:+.2f} px at lane scale)")
    print(f"hough offset {est.offset_px:+.2f} raster px = {est.offset_m:+.3f} m, confidence {est.confidence:.3f}")
    if args.out_file:
        write_pgm(raster, args.out_file)
        print(f"wrote {args.out_file}")
    else:
        for row in raster.pixels[:: max(1, raster.pixels.shape[0] // 32)]:
            print("".join("#" if v > 0.5 else "." for v in row[:: max(1, raster.pixels.shape[1] // 64)]))
    return EXIT_OK


def cmd_inspect_caption(args) -> int:
    from lanekeep.env import LaneKeepingEnv
    from lanekeep.perception import render_raster
    from lanekeep.semantics import all_descriptors, caption_from_scene, caption_text
    from lanekeep.sim.lidar import cast_lidar
    from lanekeep.sim.scene import describe_scene

    if args.all:
        for d in all_descriptors():
            print(caption_text(d))
        return EXIT_OK
    cfg = _load_config(args)
    state, track = _pose(args, cfg)
    scene = describe_scene(state, track, cast_lidar(state, track, cfg.sim.lidar_rays, cfg.sim.lidar_max_range))
    cap = caption_from_scene(scene)
    env = LaneKeepingEnv(cfg, tracks=[track])
    emb = env.embed(render_raster(state, track, env.size, env.camera).pixels, scene)
    print(cap.text)
    print("tokens:", " ".join(str(int(i)) for i in cap.token_ids))
    print("scene:", {k: getattr(v, "value", v) for k, v in vars(scene).items()})
    print(f"embedding (dim {len(emb)}), first 8:", " ".join(f"{v:+.4f}" for v in emb.e[:8]))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from lanekeep.ppo.gradcheck import gradcheck

    res = gradcheck(seed=args.seed if args.seed is not None else 0, n_batches=args.batches)
    print(f"max relative error {res.max_rel_error:.3e} at {res.worst_param} "
          f"({res.n_params} parameters, {res.n_batches} batches, {res.redraws} redraws)")
    return EXIT_OK if res.passed else EXIT_FAIL


# -- parser ----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanekeep", description="Lane-keeping simulator, PPO learner and harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the run seed")
        if out:
            p.add_argument("--out", help="output directory (overrides output_dir)")
        return p

    p = common(sub.add_parser("train", help="train a policy"))
    p.add_argument("--tracks", help="JSON track file replacing the generated pool")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint over seeded trials"))
    p.add_argument("--checkpoint", help="checkpoint JSON")
    p.add_argument("--trials", type=int, help="number of trials (default eval.n_trials)")
    p.add_argument("--driver", choices=("policy", "oracle", "random"), default="policy")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("ablate", help="train and evaluate branch-ablation variants"))
    p.add_argument("--variants", nargs="+", help=f"subset of {', '.join(VARIANTS)}")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, counted up from --seed")
    p.add_argument("--trials", type=int, help="evaluation trials per run")
    p.set_defaults(func=cmd_ablate)

    p = common(sub.add_parser("rollout", help="replay a driver and dump transitions as JSONL"), out=False)
    p.add_argument("--checkpoint")
    p.add_argument("--driver", choices=("policy", "oracle", "random"), default="policy")
    p.add_argument("--tracks", help="JSON track file")
    p.add_argument("--steps", type=int)
    p.add_argument("--dump-full", action="store_true", help="include raster pixels")
    p.add_argument("--out", dest="out_file", help="output JSONL path")
    p.set_defaults(func=cmd_rollout)

    p = common(sub.add_parser("reward-table", help="print reward terms over reference inputs"), out=False)
    p.set_defaults(func=cmd_reward_table)

    for name, func, helptext in (("inspect-raster", cmd_inspect_raster, "render one raster and run the lane detector"),
                                 ("inspect-caption", cmd_inspect_caption, "caption the scene at a pose")):
        p = common(sub.add_parser(name, help=helptext), out=False)
        p.add_argument("--track-seed", type=int)
        p.add_argument("--profile", choices=("straight", "curves", "mixed"))
        p.add_argument("--s", type=float, default=30.0, help="arc length along the track, m")
        p.add_argument("--offset", type=float, default=0.0, help="lateral offset, m, + = right")
        if name == "inspect-raster":
            p.add_argument("--out", dest="out_file", help="write the raster as PGM")
        else:
            p.add_argument("--all", action="store_true", help="list every caption of the grammar")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of the PPO gradient")
    p.add_argument("--seed", type=int)
    p.add_argument("--batches", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    from lanekeep.ppo.core import DivergenceError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
