"""Desk-scale training protocol shared by the acceptance suite and scripts/.

One place fixes the grid world, offline dataset and network sizes so trend
experiments (beta sweeps, ensemble-size sweeps, online comparisons) are run
under identical settings.  Runs are cached per process.
"""
from __future__ import annotations

import dataclasses
import functools
import time
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .ensemble import RunMetrics, Trainer
from .worlds import GridWorld, generate_dataset

GAMMA = 0.9
DESK = dict(gamma=GAMMA, alpha=0.001, hidden=(32, 32), batch_size=32, lr_q=1e-3, tau=0.99,
            total_steps=10_000, eval_interval=1_000)
DATASET_SIZE = 5_000
SEEDS = (0, 1, 2, 3)


@dataclass
class Run:
    config: TrainConfig
    metrics: list
    seconds: float

    @property
    def final(self) -> RunMetrics:
        return self.metrics[-1]


@functools.lru_cache(maxsize=None)
def desk_world() -> GridWorld:
    return GridWorld(gamma=GAMMA)


@functools.lru_cache(maxsize=None)
def desk_dataset(seed: int = 0):
    return generate_dataset(desk_world(), "random", DATASET_SIZE, seed)


def desk_config(**overrides) -> TrainConfig:
    return TrainConfig(**{**DESK, **overrides})


@functools.lru_cache(maxsize=None)
def offline_run(beta: float, seed: int, n_ensemble: int = 10, regularizer: str = "spqr") -> Run:
    if beta == 0.0 and n_ensemble < 3:
        regularizer = "none"   # identical to spqr with beta = 0, which needs N >= 3
    cfg = desk_config(beta0=beta, seed=seed, n_ensemble=n_ensemble, regularizer=regularizer)
    t = time.perf_counter()
    metrics = Trainer(cfg, desk_world(), desk_dataset()).run()
    return Run(cfg, metrics, time.perf_counter() - t)


@functools.lru_cache(maxsize=None)
def online_run(beta: float, seed: int, n_ensemble: int = 10) -> Run:
    cfg = desk_config(beta0=beta, seed=seed, n_ensemble=n_ensemble, mode="online")
    t = time.perf_counter()
    metrics = Trainer(cfg, desk_world()).run()
    return Run(cfg, metrics, time.perf_counter() - t)


def median_final(runs, field: str) -> float:
    return float(np.median([getattr(r.final, field) for r in runs]))


def best_beta(grid, seeds=SEEDS) -> float:
    """beta > 0 with the highest median final greedy return offline; ties go to the smaller beta."""
    scores = {b: median_final([offline_run(b, s) for s in seeds], "avg_return") for b in grid if b > 0}
    top = max(scores.values())
    return min(b for b, v in scores.items() if v == top)


def run_row(run: Run) -> dict:
    f = dataclasses.asdict(run.final)
    return {"beta": run.config.beta0, "seed": run.config.seed, "n_ensemble": run.config.n_ensemble,
            "mode": run.config.mode, "seconds": run.seconds, **{k: v for k, v in f.items() if k != "beta"}}
