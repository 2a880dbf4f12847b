"""Variant x seed training grid with per-run evaluation."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from lanekeep.config import VARIANTS, RunConfig
from lanekeep.harness.evaluate import evaluate
from lanekeep.ppo.train import Trainer

ABLATION_COLUMNS = ("variant", "seed", "rmse_m", "std_m", "nrmse", "mean_trial_rmse_m", "mean_return", "n_params",
                    "updates")


@dataclass
class AblationRun:
    variant: str
    seed: int
    rmse: float
    std: float
    nrmse: float
    mean_trial_rmse: float
    mean_return: float
    n_params: int
    updates: int
    param_shapes: tuple


def with_seed(cfg: RunConfig, seed: int, **sections) -> RunConfig:
    d = cfg.to_dict()
    d["seed"] = seed
    for name, upd in sections.items():
        d[name].update(upd)
    return RunConfig.from_dict(d)


def run_ablation(cfg: RunConfig, variants: Iterable[str] = VARIANTS, seeds: Sequence[int] = (0, 1, 2, 3, 4),
                 n_trials: int | None = None, out_dir: str | None = None, progress=None) -> list[AblationRun]:
    runs = []
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
        for seed in seeds:
            run_cfg = with_seed(cfg, seed, ppo={"variant": v})
            trainer = Trainer(run_cfg)
            trainer.run()
            summary = evaluate(trainer.net, run_cfg, n_trials, norm_state=trainer.env.norm.state_dict())
            net = trainer.net
            run = AblationRun(v, seed, summary.pooled.rmse, summary.pooled.std, summary.pooled.nrmse,
                              summary.mean_rmse, summary.mean_return, net.n_params(), trainer.updates,
                              tuple((n, net.params[n].shape) for n in net.names))
            runs.append(run)
            if progress is not None:
                progress(run)
            if out_dir is not None:
                write_ablation_csv(runs, os.path.join(out_dir, "ablation.csv"))
    return runs


def write_ablation_csv(runs: list[AblationRun], path) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for r in runs:
            w.writerow([r.variant, r.seed, repr(r.rmse), repr(r.std), repr(r.nrmse), repr(r.mean_trial_rmse),
                        repr(r.mean_return), r.n_params, r.updates])


def median_rmse(runs: list[AblationRun]) -> dict[str, float]:
    out: dict[str, list[float]] = {}
    for r in runs:
        out.setdefault(r.variant, []).append(r.rmse)
    return {v: float(np.median(x)) for v, x in out.items()}


def comparison_table(runs: list[AblationRun]) -> str:
    lines = ["variant               median_rmse  min_rmse  max_rmse  runs"]
    groups: dict[str, list[float]] = {}
    for r in runs:
        groups.setdefault(r.variant, []).append(r.rmse)
    for v, x in groups.items():
        lines.append(f"{v:<20}  {np.median(x):11.4f}  {min(x):8.4f}  {max(x):8.4f}  {len(x):4d}")
    return "\n".join(lines)
