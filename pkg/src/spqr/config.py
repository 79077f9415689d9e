"""Dataclass configs with strict JSON loading (unknown keys are rejected)."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

TARGET_RULES = ("mean", "min", "redq_min_subset")
EVAL_RULES = ("mean", "min")
BETA_SCHEDULES = ("constant", "linear_decay", "exp_decay")
REGULARIZERS = ("none", "spqr", "gini")
MODES = ("online", "offline")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.99
    alpha: float = 0.005
    n_ensemble: int = 10
    target_rule: str = "min"
    eval_rule: str = "min"
    subset_m: int = 2
    beta0: float = 0.0
    beta_schedule: str = "constant"
    beta_end_step: int | None = None     # defaults to total_steps
    beta_decay_rate: float = 0.1
    utd: int = 1
    tau: float = 0.995
    batch_size: int = 64
    lr_q: float = 3e-4
    lr_pi: float = 3e-4
    total_steps: int = 5000
    seed: int = 0
    regularizer: str = "spqr"
    gini_sign: float = -1.0
    rho: float = 0.5
    eps: float = 0.01
    hidden: tuple = (64, 64)
    activation: str = "relu"
    mode: str = "offline"
    start_steps: int = 500
    eval_interval: int = 500

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.target_rule not in TARGET_RULES:
            raise ConfigError(f"target_rule must be one of {TARGET_RULES}")
        if self.eval_rule not in EVAL_RULES:
            raise ConfigError(f"eval_rule must be one of {EVAL_RULES}")
        if self.beta_schedule not in BETA_SCHEDULES:
            raise ConfigError(f"beta_schedule must be one of {BETA_SCHEDULES}")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"regularizer must be one of {REGULARIZERS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.n_ensemble < 1:
            raise ConfigError("n_ensemble must be >= 1")
        if not 1 <= self.subset_m <= self.n_ensemble:
            raise ConfigError("subset_m must lie in [1, n_ensemble]")
        if self.regularizer == "spqr" and self.n_ensemble < 3:
            raise ConfigError("spqr needs n_ensemble >= 3")
        if self.regularizer == "gini" and self.n_ensemble < 2:
            raise ConfigError("gini needs n_ensemble >= 2")
        if self.utd < 1 or self.batch_size < 1 or self.total_steps < 0 or self.eval_interval < 1:
            raise ConfigError("utd, batch_size, eval_interval must be positive; total_steps >= 0")


@dataclass
class WorldConfig:
    width: int = 5
    height: int = 5
    walls: list = field(default_factory=list)
    goals: list = field(default_factory=lambda: [[4, 4]])
    p_slip: float = 0.1
    gamma: float = 0.99
    step_reward: float = 0.0
    max_episode_steps: int = 50

    def build(self):
        from .worlds import GridWorld
        return GridWorld(self.width, self.height, frozenset(map(tuple, self.walls)),
                         frozenset(map(tuple, self.goals)), (), self.p_slip, self.gamma,
                         self.step_reward, 1.0, self.max_episode_steps)


@dataclass
class DatasetConfig:
    provenance: str = "random"
    size: int = 5000
    seed: int = 0
    path: str | None = None


@dataclass
class DetectConfig:
    psi_grid: list = field(default_factory=lambda: [0.0, 0.3, 0.6, 0.8, 0.95])
    n_dim: int = 64
    trials: int = 2000
    calibration_draws: int = 500
    kl_threshold: float | None = None
    seed: int = 0


@dataclass
class RmtConfig:
    dim: int = 512
    sigma: float = 1.0
    bins: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.sigma <= 0 or self.bins < 1:
            raise ConfigError("dim, bins must be >= 1 and sigma > 0")


@dataclass
class AnalyzeConfig:
    checkpoint: str | None = None
    world: dict = field(default_factory=dict)
    bins: int = 10
    alpha: float = 0.025
    n_rollouts: int = 200
    rho: float = 0.5
    eps: float = 0.01
    histogram_bins: int = 20
    seed: int = 0


@dataclass
class TrainRun:
    """A train command document: TrainConfig keys at top level plus optional sub-objects."""
    train: TrainConfig
    world: WorldConfig
    dataset: DatasetConfig
    chi2_bins: int = 5


def train_run_from_dict(doc: dict | None) -> TrainRun:
    doc = dict(doc or {})
    world = from_dict(WorldConfig, doc.pop("world", None), "world")
    dataset = from_dict(DatasetConfig, doc.pop("dataset", None), "dataset")
    chi2_bins = doc.pop("chi2_bins", 5)
    if not isinstance(chi2_bins, int) or chi2_bins < 2:
        raise ConfigError("chi2_bins must be an integer >= 2")
    return TrainRun(from_dict(TrainConfig, doc), world, dataset, chi2_bins)


def from_dict(cls, doc: dict, where: str = ""):
    """Build dataclass ``cls`` from ``doc``; unknown keys raise ConfigError."""
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or cls.__name__}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where or cls.__name__}: unknown keys {unknown}")
    try:
        return cls(**doc)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def to_dict(obj) -> dict:
    out = dataclasses.asdict(obj)
    for k, v in out.items():
        if isinstance(v, tuple):
            out[k] = list(v)
    return out


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
