"""Ensemble soft Q-learning with SPQR or Gini regularisation on grid worlds.

The N critics are stored as one stacked ``Mlp`` (leading axis N) mapping state
features (rescaled to [-1, 1]) to one Q-value per action; the actor is a softmax policy over the
same features.  Every member regresses onto the same Bellman target.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .config import TrainConfig, to_dict
from .diagnostics import independence_accept_ratio, pearson_matrix
from .loss import batch_spectra, spqr_loss_batch
from .worlds import Dataset, GridWorld, greedy_table, policy_q, policy_return, step as world_step
from .worlds import value_iteration

METRIC_FIELDS = ("step", "avg_return", "q_mean", "q_std", "bias_mean", "bias_std", "spike_count",
                 "chi2_accept_ratio", "mean_abs_corr", "loss_q", "loss_spqr", "beta")


class TrainingDiverged(FloatingPointError):
    def __init__(self, record: dict):
        super().__init__(f"non-finite values at step {record.get('step')}: {record.get('reason')}")
        self.record = record


@dataclass
class RunMetrics:
    step: int
    avg_return: float
    q_mean: float
    q_std: float
    bias_mean: float
    bias_std: float
    spike_count: int
    chi2_accept_ratio: float
    mean_abs_corr: float
    loss_q: float
    loss_spqr: float
    beta: float


# ---------------------------------------------------------------- ensemble rules

def ens_tar(rule: str, qvals, subset_m: int = 2, rng=None):
    """Bellman-target reduction over the ensemble axis (axis 0)."""
    q = np.asarray(qvals, dtype=np.float64)
    n = q.shape[0]
    if n < 1:
        raise ValueError("empty ensemble")
    if rule == "mean":
        return q.mean(axis=0)
    if rule == "min":
        return q.min(axis=0)
    if rule == "redq_min_subset":
        if not 1 <= subset_m <= n:
            raise ValueError(f"subset size {subset_m} invalid for ensemble of {n}")
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        idx = rng.choice(n, size=subset_m, replace=False)
        return q[idx].min(axis=0)
    raise ValueError(f"unknown target rule {rule!r}")


def ens_eval(rule: str, qvals):
    q = np.asarray(qvals, dtype=np.float64)
    if rule == "mean":
        return q.mean(axis=0)
    if rule == "min":
        return q.min(axis=0)
    raise ValueError(f"unknown eval rule {rule!r}")


def bellman_target(r, done, gamma, alpha, tar_q, logpi_next):
    return r + (1.0 - np.asarray(done, dtype=np.float64)) * gamma * (tar_q - alpha * logpi_next)


def beta_schedule(config: TrainConfig, step: int) -> float:
    end = config.beta_end_step or config.total_steps
    if config.beta_schedule == "constant" or end <= 0:
        return config.beta0
    if config.beta_schedule == "linear_decay":
        return config.beta0 * max(0.0, 1.0 - step / end)
    return config.beta0 * config.beta_decay_rate ** (step / end)


def gini_regularizer(qvals):
    """Normalised Gini dispersion sum|q_i - q_j| / (2 N^2 (mean|q| + 1e-8)) and its subgradient.

    Accepts (N,) or (B, N); a 2-D input returns per-row losses and gradients.
    """
    q = np.asarray(qvals, dtype=np.float64)
    one = q.ndim == 1
    q = np.atleast_2d(q)
    n = q.shape[1]
    if n < 2:
        raise ValueError("gini needs at least two members")
    diff = q[:, :, None] - q[:, None, :]
    total = np.abs(diff).sum(axis=(1, 2))
    m = np.abs(q).mean(axis=1) + 1e-8
    denom = 2.0 * n * n * m
    loss = total / denom
    d_total = 2.0 * np.sign(diff).sum(axis=2)
    d_m = np.sign(q) / n
    grad = d_total / denom[:, None] - (total / denom**2)[:, None] * 2.0 * n * n * d_m
    if one:
        return float(loss[0]), grad[0]
    return loss, grad


# ---------------------------------------------------------------- networks

def net_input(feats):
    """Map [0, 1] grid features to [-1, 1] before any network sees them."""
    return 2.0 * np.asarray(feats, dtype=np.float64) - 1.0


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass(eq=False)
class SoftPolicy:
    net: nn.Mlp
    adam: nn.AdamState

    def logits(self, feats):
        return nn.forward(self.net, net_input(feats))[0]

    def probs(self, feats):
        return np.exp(_log_softmax(self.logits(feats)))

    def table(self, world: GridWorld) -> np.ndarray:
        return self.probs(world.features(np.arange(world.n_states)))


@dataclass(eq=False)
class QEnsemble:
    members: nn.Mlp
    targets: nn.Mlp
    adam: nn.AdamState
    eval_rule: str = "min"

    @property
    def n(self) -> int:
        return self.members.n_stack

    def q_all(self, feats, targets: bool = False):
        return nn.forward(self.targets if targets else self.members, net_input(feats))[0]

    def q_sa(self, feats, actions):
        q = self.q_all(feats)
        return q[:, np.arange(q.shape[1]), np.asarray(actions)]

    def eval_sa(self, feats, actions, rule: str | None = None):
        return ens_eval(rule or self.eval_rule, self.q_sa(feats, actions))


def make_ensemble(config: TrainConfig, n_features: int, n_actions: int) -> QEnsemble:
    sizes = (n_features, *config.hidden, n_actions)
    members = nn.init_stack(sizes, config.n_ensemble, seed=config.seed, activation=config.activation)
    return QEnsemble(members, members.copy(), nn.AdamState.for_params(members, config.lr_q),
                     config.eval_rule)


def make_policy(config: TrainConfig, n_features: int, n_actions: int) -> SoftPolicy:
    sizes = (n_features, *config.hidden, n_actions)
    net = nn.init(sizes, seed=[config.seed, 10_000], activation=config.activation)
    # zero output layer: start from the uniform policy
    net.weights[-1][:] = 0.0
    return SoftPolicy(net, nn.AdamState.for_params(net, config.lr_pi))


# ---------------------------------------------------------------- updates

@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def perm_seed_for(config: TrainConfig, update: int) -> int:
    return config.seed * 1_000_003 + update


def critic_update(ens: QEnsemble, batch: Batch, policy: SoftPolicy, config: TrainConfig,
                  step: int, rng: np.random.Generator, update: int = 0):
    """One gradient step on every critic.  Returns (mse, regulariser loss)."""
    b = batch.a.shape[0]
    rows = np.arange(b)
    logp2 = _log_softmax(policy.logits(batch.s2))
    a2 = sample_actions(np.exp(logp2), rng)
    qt = ens.q_all(batch.s2, targets=True)[:, rows, a2]
    tar = ens_tar(config.target_rule, qt, config.subset_m, rng)
    y = bellman_target(batch.r, batch.done, config.gamma, config.alpha, tar, logp2[rows, a2])

    x = net_input(np.concatenate([batch.s, batch.s2]))
    q, cache = nn.forward(ens.members, x)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(y))):
        raise TrainingDiverged({"step": step, "reason": "non-finite Q-values"})
    diff = q[:, rows, batch.a] - y
    mse = float(np.mean(diff**2))
    d_out = np.zeros_like(q)
    d_out[:, rows, batch.a] = 2.0 * diff / b

    beta = beta_schedule(config, step)
    reg = 0.0
    if config.regularizer == "spqr":
        q_next = q[:, b + rows, a2].T
        reg, g = spqr_loss_batch(q_next, config.rho, config.eps, perm_seed_for(config, update))
        d_out[:, b + rows, a2] += beta * g.T
    elif config.regularizer == "gini":
        losses, g = gini_regularizer(q[:, rows, batch.a].T)
        reg = float(losses.mean())
        d_out[:, rows, batch.a] += config.gini_sign * beta * g.T / b
    if not (math.isfinite(mse) and math.isfinite(reg)):
        raise TrainingDiverged({"step": step, "reason": "critic loss", "loss_q": mse, "loss_reg": reg})

    grads, _ = nn.backward(ens.members, cache, d_out)
    try:
        nn.adam_step(ens.members, grads, ens.adam)
    except nn.NonFiniteGradient as exc:
        raise TrainingDiverged({"step": step, "reason": str(exc)}) from exc
    polyak_update(ens, config.tau)
    return mse, reg


def actor_update(policy: SoftPolicy, ens: QEnsemble, batch: Batch, config: TrainConfig) -> float:
    """Exact-expectation soft policy step: minimise sum_a pi (alpha log pi - Q_eval)."""
    b = batch.s.shape[0]
    logits, cache = nn.forward(policy.net, net_input(batch.s))
    logp = _log_softmax(logits)
    pi = np.exp(logp)
    qe = ens_eval(config.eval_rule, ens.q_all(batch.s))
    c = config.alpha * logp - qe
    loss = float(np.sum(pi * c) / b)
    d_logits = pi * (c - np.sum(pi * c, axis=1, keepdims=True)) / b
    grads, _ = nn.backward(policy.net, cache, d_logits)
    try:
        nn.adam_step(policy.net, grads, policy.adam)
    except nn.NonFiniteGradient as exc:
        raise TrainingDiverged({"step": policy.adam.step, "reason": f"actor: {exc}"}) from exc
    return loss


def actor_gradient_norm(policy: SoftPolicy, q_eval: np.ndarray, feats, alpha: float) -> float:
    """Norm of the policy-objective gradient w.r.t. the logits for a fixed Q table."""
    logp = _log_softmax(policy.logits(feats))
    pi = np.exp(logp)
    c = alpha * logp - q_eval
    g = pi * (c - np.sum(pi * c, axis=1, keepdims=True))
    return float(np.linalg.norm(g))


def polyak_update(ens: QEnsemble, tau: float) -> None:
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    for t, m in zip(ens.targets.arrays(), ens.members.arrays()):
        t *= tau
        t += (1.0 - tau) * m


# ---------------------------------------------------------------- replay

class ReplayBuffer:
    def __init__(self, capacity: int, n_features: int):
        self.s = np.zeros((capacity, n_features))
        self.s2 = np.zeros((capacity, n_features))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0

    def add(self, s, a, r, s2, done):
        i = self.size
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s2, float(done)
        self.size += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx])

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "ReplayBuffer":
        buf = cls(len(ds), ds.s.shape[1])
        buf.s[:], buf.a[:], buf.r[:], buf.s2[:] = ds.s, ds.a, ds.r, ds.s2
        buf.done[:] = ds.done.astype(float)
        buf.size = len(ds)
        return buf


# ---------------------------------------------------------------- training loop

class Trainer:
    def __init__(self, config: TrainConfig, world: GridWorld, dataset: Dataset | None = None,
                 chi2_bins: int = 5, chi2_alpha: float = 0.025):
        if config.mode == "offline" and dataset is None:
            raise ValueError("offline training needs a dataset")
        self.config = config
        self.world = world
        self.rng = np.random.default_rng(config.seed)
        nf = 2
        self.ensemble = make_ensemble(config, nf, world.n_actions)
        self.policy = make_policy(config, nf, world.n_actions)
        if config.mode == "offline":
            self.buffer = ReplayBuffer.from_dataset(dataset)
        else:
            self.buffer = ReplayBuffer(max(config.total_steps, 1), nf)
        self.q_star = value_iteration(world)
        self.chi2_bins = chi2_bins
        self.chi2_alpha = chi2_alpha
        open_states = world.open_states()
        self.eval_states = np.repeat(open_states, world.n_actions)
        self.eval_actions = np.tile(np.arange(world.n_actions), open_states.size)
        self.eval_feats = world.features(self.eval_states)
        self.updates = 0
        self._loss_q, self._loss_reg = [], []

    # -- environment interaction (online mode)
    def _reset(self):
        self.state = int(self.rng.choice(self.world.start_states()))
        self.t_episode = 0

    def _act(self, step: int) -> int:
        if step < self.config.start_steps:
            return int(self.rng.integers(self.world.n_actions))
        probs = self.policy.probs(self.world.features(np.array([self.state])))
        return int(sample_actions(probs, self.rng)[0])

    def _interact(self, step: int):
        a = self._act(step)
        tr, nxt = world_step(self.world, self.state, a, self.rng)
        self.buffer.add(tr.s, tr.a, tr.r, tr.s2, tr.done)
        self.t_episode += 1
        if tr.done or self.t_episode >= self.world.max_episode_steps:
            self._reset()
        else:
            self.state = nxt

    def _update(self, step: int):
        cfg = self.config
        for _ in range(cfg.utd):
            batch = self.buffer.sample(cfg.batch_size, self.rng)
            mse, reg = critic_update(self.ensemble, batch, self.policy, cfg, step, self.rng,
                                     self.updates)
            self.updates += 1
            self._loss_q.append(mse)
            self._loss_reg.append(reg)
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        actor_update(self.policy, self.ensemble, batch, cfg)

    def run(self):
        cfg = self.config
        metrics = []
        if cfg.mode == "online":
            self._reset()
        for step in range(cfg.total_steps):
            if cfg.mode == "online":
                self._interact(step)
                if self.buffer.size < cfg.batch_size:
                    continue
            self._update(step)
            if (step + 1) % cfg.eval_interval == 0:
                metrics.append(self.evaluate(step + 1))
        return metrics

    # -- evaluation
    def q_table(self) -> np.ndarray:
        """Member Q-values on every open (state, action): shape (pairs, N)."""
        return self.ensemble.q_sa(self.eval_feats, self.eval_actions).T

    def greedy_policy(self) -> np.ndarray:
        q = self.ensemble.q_all(self.world.features(np.arange(self.world.n_states)))
        return greedy_table(ens_eval(self.config.eval_rule, q))

    def evaluate(self, step: int) -> RunMetrics:
        cfg = self.config
        q = self.q_table()
        if not np.all(np.isfinite(q)):
            raise TrainingDiverged({"step": step, "reason": "non-finite Q-values"})
        avg_return = policy_return(self.world, self.greedy_policy())
        q_pi = policy_q(self.world, self.policy.table(self.world))[self.eval_states, self.eval_actions]
        pred = ens_eval(cfg.eval_rule, q.T)
        scale = max(abs(float(q_pi.mean())), 1e-6)
        bias = (pred - q_pi) / scale
        if q.shape[1] >= 3:
            lam = batch_spectra(q, perm_seed=cfg.seed)
            spikes = int(np.count_nonzero(np.abs(lam) > 2.0))
        else:
            spikes = 0
        errors = q - self.q_star[self.eval_states, self.eval_actions][:, None]
        accept = independence_accept_ratio(errors, self.chi2_bins, self.chi2_alpha) if q.shape[1] > 1 else 0.0
        corr = pearson_matrix(q).mean_abs_offdiag() if q.shape[1] > 1 else float("nan")
        loss_q = float(np.mean(self._loss_q)) if self._loss_q else float("nan")
        loss_reg = float(np.mean(self._loss_reg)) if self._loss_reg else float("nan")
        self._loss_q, self._loss_reg = [], []
        return RunMetrics(step, avg_return, float(q.mean()), float(q.std(axis=1).mean()),
                          float(bias.mean()), float(bias.std()), spikes, accept, corr,
                          loss_q, loss_reg, beta_schedule(cfg, step))

    # -- checkpoints
    def save_checkpoint(self, out_dir) -> str:
        os.makedirs(out_dir, exist_ok=True)
        members, targets = [], []
        for k in range(self.ensemble.n):
            for kind, stack, names in (("member", self.ensemble.members, members),
                                       ("target", self.ensemble.targets, targets)):
                name = f"{kind}_{k:03d}.json"
                nn.save(stack.member(k), os.path.join(out_dir, name))
                names.append(name)
        nn.save(self.policy.net, os.path.join(out_dir, "policy.json"))
        manifest = {"members": members, "targets": targets, "policy": "policy.json",
                    "eval_rule": self.config.eval_rule, "config": to_dict(self.config)}
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return path


def load_checkpoint(manifest_path):
    """Returns (QEnsemble, SoftPolicy or None, manifest dict)."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    members = [nn.load(os.path.join(base, f)) for f in manifest["members"]]
    targets = [nn.load(os.path.join(base, f)) for f in manifest.get("targets", manifest["members"])]
    shapes = {m.layer_sizes for m in members + targets}
    if len(shapes) != 1 or len(members) != len(targets):
        raise ValueError("checkpoint members have mismatched shapes")
    stacked = nn.stack(members)
    ens = QEnsemble(stacked, nn.stack(targets), nn.AdamState.for_params(stacked, 3e-4),
                    manifest.get("eval_rule", "min"))
    policy = None
    if manifest.get("policy"):
        net = nn.load(os.path.join(base, manifest["policy"]))
        policy = SoftPolicy(net, nn.AdamState.for_params(net, 3e-4))
    return ens, policy, manifest


def train(config: TrainConfig, world: GridWorld, dataset: Dataset | None = None, **kw):
    """Run a full training loop and return the RunMetrics series."""
    trainer = Trainer(config, world, dataset, **kw)
    return trainer.run()


def metrics_rows(metrics) -> list[dict]:
    return [asdict(m) for m in metrics]
