"""Toy grid MDPs with exact dynamic-programming oracles and offline datasets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}
PERPENDICULAR = {UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT), LEFT: (UP, DOWN), RIGHT: (UP, DOWN)}
PROVENANCES = ("random", "medium", "expert", "replay")


class NonConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP.  ``P[s, a, s']`` transition probabilities, ``R[s, a, s']``
    rewards, ``terminal[s']`` marks states whose entry ends the episode."""

    P: np.ndarray
    R: np.ndarray
    terminal: np.ndarray
    gamma: float

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]


@dataclass(frozen=True)
class GridWorld:
    width: int = 5
    height: int = 5
    walls: frozenset = frozenset()
    goals: frozenset = frozenset({(4, 4)})
    starts: tuple = ()
    p_slip: float = 0.1
    gamma: float = 0.99
    step_reward: float = 0.0
    goal_reward: float = 1.0
    max_episode_steps: int = 50

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(tuple(c) for c in self.walls))
        object.__setattr__(self, "goals", frozenset(tuple(c) for c in self.goals))
        if not 0.0 <= self.p_slip < 1.0:
            raise ValueError("p_slip must lie in [0, 1)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.goals:
            raise ValueError("need at least one goal")
        starts = tuple(tuple(c) for c in self.starts) or tuple(
            c for c in self.cells() if c not in self.goals)
        object.__setattr__(self, "starts", starts)
        if not self._all_reach_goal():
            raise ValueError("goal not reachable from every open cell")

    n_actions = 4

    def cells(self):
        return [(x, y) for y in range(self.height) for x in range(self.width)
                if (x, y) not in self.walls]

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def index(self, cell) -> int:
        return cell[1] * self.width + cell[0]

    def cell(self, s: int):
        return (s % self.width, s // self.width)

    def features(self, s) -> np.ndarray:
        s = np.asarray(s)
        x = s % self.width
        y = s // self.width
        fx = x / (self.width - 1) if self.width > 1 else np.zeros_like(x, dtype=float)
        fy = y / (self.height - 1) if self.height > 1 else np.zeros_like(y, dtype=float)
        return np.stack([fx, fy], axis=-1).astype(np.float64)

    def move(self, cell, action: int):
        dx, dy = MOVES[action]
        nxt = (cell[0] + dx, cell[1] + dy)
        if not (0 <= nxt[0] < self.width and 0 <= nxt[1] < self.height) or nxt in self.walls:
            return cell
        return nxt

    def _all_reach_goal(self) -> bool:
        seen = set(self.goals)
        frontier = list(self.goals)
        while frontier:
            c = frontier.pop()
            for a in MOVES:
                for prev in self.cells():
                    if prev not in seen and self.move(prev, a) == c:
                        seen.add(prev)
                        frontier.append(prev)
        return all(c in seen for c in self.cells())

    def start_states(self) -> np.ndarray:
        return np.array([self.index(c) for c in self.starts])

    def open_states(self) -> np.ndarray:
        """Non-wall, non-goal states: where values and biases are evaluated."""
        return np.array([self.index(c) for c in self.cells() if c not in self.goals])

    def tabular(self) -> TabularMDP:
        ns, na = self.n_states, self.n_actions
        P = np.zeros((ns, na, ns))
        R = np.zeros((ns, na, ns))
        terminal = np.zeros(ns, dtype=bool)
        for g in self.goals:
            terminal[self.index(g)] = True
        for c in self.cells():
            s = self.index(c)
            for a in range(na):
                if c in self.goals:
                    P[s, a, s] = 1.0
                    continue
                outcomes = [(a, 1.0 - self.p_slip)]
                outcomes += [(b, self.p_slip / 2.0) for b in PERPENDICULAR[a]]
                for b, prob in outcomes:
                    if prob == 0.0:
                        continue
                    s2 = self.index(self.move(c, b))
                    P[s, a, s2] += prob
                    R[s, a, s2] = self.goal_reward if terminal[s2] else self.step_reward
        for wall in self.walls:
            s = self.index(wall)
            P[s, :, s] = 1.0
        return TabularMDP(P, R, terminal, self.gamma)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s2: np.ndarray
    done: bool


def _as_tabular(world) -> TabularMDP:
    return world if isinstance(world, TabularMDP) else world.tabular()


def bellman_backup(mdp: TabularMDP, q: np.ndarray) -> np.ndarray:
    v = q.max(axis=1)
    cont = np.where(mdp.terminal, 0.0, v)
    return np.einsum("sat,sat->sa", mdp.P, mdp.R) + mdp.gamma * mdp.P @ cont


def value_iteration(world, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Optimal Q table (S, A); sup-norm Bellman residual below ``tol``."""
    mdp = _as_tabular(world)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        nxt = bellman_backup(mdp, q)
        # residual of nxt is at most gamma * |nxt - q|
        if np.max(np.abs(nxt - q)) < tol:
            return nxt
        q = nxt
    raise NonConvergence(f"value iteration did not reach {tol} in {max_iter} sweeps")


def policy_q(world, policy: np.ndarray) -> np.ndarray:
    """Exact Q^pi for a stochastic policy given as an (S, A) probability table."""
    mdp = _as_tabular(world)
    ns = mdp.n_states
    r_sa = np.einsum("sat,sat->sa", mdp.P, mdp.R)
    cont = (~mdp.terminal).astype(float)
    p_pi = np.einsum("sa,sat->st", policy, mdp.P) * cont[None, :]
    r_pi = np.einsum("sa,sa->s", policy, r_sa)
    v = np.linalg.solve(np.eye(ns) - mdp.gamma * p_pi, r_pi)
    return r_sa + mdp.gamma * mdp.P @ (cont * v)


def policy_return(world: GridWorld, policy: np.ndarray) -> float:
    """Expected discounted return from the uniform start distribution."""
    q = policy_q(world, policy)
    v = np.einsum("sa,sa->s", policy, q)
    return float(v[world.start_states()].mean())


def greedy_table(q: np.ndarray) -> np.ndarray:
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return pi


def epsilon_greedy_table(q: np.ndarray, eps: float) -> np.ndarray:
    return (1.0 - eps) * greedy_table(q) + eps / q.shape[1]


def optimal_return(world: GridWorld) -> float:
    return policy_return(world, greedy_table(value_iteration(world)))


def step(world: GridWorld, state: int, action: int, seed=None) -> tuple[Transition, int]:
    """One environment step; returns the transition and the next state index."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cell = world.cell(state)
    taken = action
    if world.p_slip > 0.0 and rng.random() < world.p_slip:
        taken = PERPENDICULAR[action][int(rng.integers(2))]
    nxt = world.move(cell, taken)
    done = nxt in world.goals
    r = world.goal_reward if done else world.step_reward
    s2 = world.index(nxt)
    return Transition(world.features(state), int(action), float(r), world.features(s2), bool(done)), s2


@dataclass
class Dataset:
    """Transitions stored column-wise: s (n, 2), a (n,), r (n,), s2 (n, 2), done (n,)."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    provenance: str = "random"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.a.shape[0]

    def __post_init__(self):
        if len(self) == 0:
            raise ValueError("empty dataset")

    def transition(self, i: int) -> Transition:
        return Transition(self.s[i], int(self.a[i]), float(self.r[i]), self.s2[i], bool(self.done[i]))

    @classmethod
    def concat(cls, parts, provenance: str, seed: int, meta: dict | None = None) -> "Dataset":
        return cls(np.concatenate([p.s for p in parts]), np.concatenate([p.a for p in parts]),
                   np.concatenate([p.r for p in parts]), np.concatenate([p.s2 for p in parts]),
                   np.concatenate([p.done for p in parts]), provenance, seed, meta or {})

    def write_jsonl(self, path) -> None:
        header = {"provenance": self.provenance, "seed": self.seed, "size": len(self), **self.meta}
        lines = [json.dumps(header, sort_keys=True)]
        for i in range(len(self)):
            lines.append(json.dumps({
                "s": [float(v) for v in self.s[i]], "a": int(self.a[i]),
                "r": float(self.r[i]), "s2": [float(v) for v in self.s2[i]],
                "done": bool(self.done[i]),
            }))
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "Dataset":
        with open(path) as fh:
            header = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        provenance = header.pop("provenance")
        seed = header.pop("seed")
        header.pop("size", None)
        return cls(np.array([r["s"] for r in rows], dtype=float), np.array([r["a"] for r in rows]),
                   np.array([r["r"] for r in rows], dtype=float),
                   np.array([r["s2"] for r in rows], dtype=float),
                   np.array([r["done"] for r in rows], dtype=bool), provenance, seed, header)


def rollout_dataset(world: GridWorld, policy: np.ndarray, size: int, rng: np.random.Generator,
                    provenance: str = "random", seed: int = 0) -> Dataset:
    """Collect ``size`` transitions by running a tabular behaviour policy."""
    starts = world.start_states()
    s_idx, a_idx, rew, s2_idx, dones = [], [], [], [], []
    state = int(rng.choice(starts))
    t = 0
    while len(a_idx) < size:
        a = int(rng.choice(world.n_actions, p=policy[state]))
        tr, nxt = step(world, state, a, rng)
        s_idx.append(state)
        a_idx.append(a)
        rew.append(tr.r)
        s2_idx.append(nxt)
        dones.append(tr.done)
        t += 1
        if tr.done or t >= world.max_episode_steps:
            state = int(rng.choice(starts))
            t = 0
        else:
            state = nxt
    return Dataset(world.features(np.array(s_idx)), np.array(a_idx), np.array(rew),
                   world.features(np.array(s2_idx)), np.array(dones, dtype=bool), provenance, seed)


def normalized_score(world: GridWorld, policy: np.ndarray, q_star: np.ndarray | None = None) -> float:
    """0 for the uniform-random policy, 1 for the optimal policy."""
    q_star = value_iteration(world) if q_star is None else q_star
    lo = policy_return(world, np.full_like(q_star, 1.0 / q_star.shape[1]))
    hi = policy_return(world, greedy_table(q_star))
    return (policy_return(world, policy) - lo) / (hi - lo)


def medium_epsilon(world: GridWorld, q_star: np.ndarray | None = None, target: float = 1.0 / 3.0) -> float:
    """Exploration rate whose eps-greedy policy scores ``target`` on the normalized scale."""
    q_star = value_iteration(world) if q_star is None else q_star
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if normalized_score(world, epsilon_greedy_table(q_star, mid), q_star) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


REPLAY_EPSILONS = (1.0, 0.75, 0.5, 0.25, 0.05)


def generate_dataset(world: GridWorld, provenance: str, size: int, seed: int = 0) -> Dataset:
    if size < 1:
        raise ValueError("size must be >= 1")
    if provenance not in PROVENANCES:
        raise ValueError(f"unknown provenance {provenance!r}")
    rng = np.random.default_rng(seed)
    na = world.n_actions
    if provenance == "random":
        pi = np.full((world.n_states, na), 1.0 / na)
        return rollout_dataset(world, pi, size, rng, provenance, seed)
    q_star = value_iteration(world)
    if provenance == "expert":
        ds = rollout_dataset(world, epsilon_greedy_table(q_star, 0.05), size, rng, provenance, seed)
        ds.meta["epsilon"] = 0.05
        return ds
    if provenance == "medium":
        eps = medium_epsilon(world, q_star)
        ds = rollout_dataset(world, epsilon_greedy_table(q_star, eps), size, rng, provenance, seed)
        ds.meta["epsilon"] = eps
        return ds
    k = len(REPLAY_EPSILONS)
    sizes = [size // k + (i < size % k) for i in range(k)]
    parts = [rollout_dataset(world, epsilon_greedy_table(q_star, e), n, rng, provenance, seed)
             for e, n in zip(REPLAY_EPSILONS, sizes) if n > 0]
    return Dataset.concat(parts, provenance, seed, {"epsilons": list(REPLAY_EPSILONS)})


def mc_return(world: GridWorld, policy, s: int, a: int, horizon: int, n_rollouts: int,
              seed=0, return_samples: bool = False):
    """Monte-Carlo discounted return starting with the forced pair (s, a).

    ``policy`` is an (S, A) probability table.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    policy = np.asarray(policy, dtype=np.float64)
    deterministic = np.all(policy.max(axis=1) == 1.0)
    greedy = policy.argmax(axis=1)
    out = np.empty(n_rollouts)
    for k in range(n_rollouts):
        state, action, total, disc = s, a, 0.0, 1.0
        for _ in range(horizon):
            tr, state = step(world, state, action, rng)
            total += disc * tr.r
            if tr.done:
                break
            disc *= world.gamma
            action = int(greedy[state]) if deterministic else int(rng.choice(world.n_actions, p=policy[state]))
        out[k] = total
    return out if return_samples else float(out.mean())
