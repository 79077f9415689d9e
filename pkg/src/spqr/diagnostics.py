"""Statistical evidence for (in)dependence of ensemble members.

Chi-square uniformity and independence tests, Pearson matrices, spike
histograms of Q-matrix spectra, Monte-Carlo bias, and the spiked-model
detection experiment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .loss import batch_spectra
from .spectral import (DEFAULT_EPS, DEFAULT_RHO, SpikedModelParams, kl_to_semicircle,
                       sample_spiked_wishart, scaled_spectrum)

_TINY = 1e-300


def _gamma_series(a: float, x: float) -> float:
    # regularized lower incomplete gamma P(a, x), x < a + 1
    ap = a
    total = term = 1.0 / a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # regularized upper incomplete gamma Q(a, x) by modified Lentz, x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_sf(statistic: float, dof: int) -> float:
    return gammaincc(0.5 * dof, 0.5 * statistic)


@dataclass
class TestReport:
    statistic: float
    dof: int
    p_value: float
    alpha: float
    accept: bool
    degenerate: bool = False
    low_counts: bool = False

    __test__ = False  # keep pytest from collecting this as a test class


def _reject_degenerate(alpha: float, dof: int = 1) -> TestReport:
    return TestReport(math.inf, max(dof, 1), 0.0, alpha, False, degenerate=True)


def _equal_width_codes(x: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = x.min(), x.max()
    codes = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(codes, 0, bins - 1)


def chi2_uniform(samples, bins: int = 10, alpha: float = 0.025) -> TestReport:
    """Pearson goodness-of-fit to a uniform over [min, max] with equal-width bins."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if bins < 2:
        raise ValueError("bins must be >= 2")
    n = x.size
    if n == 0 or x.max() == x.min():
        return _reject_degenerate(alpha, bins - 1)
    counts = np.bincount(_equal_width_codes(x, bins), minlength=bins)
    expected = n / bins
    stat = float(np.sum((counts - expected) ** 2) / expected)
    dof = bins - 1
    p = chi2_sf(stat, dof)
    return TestReport(stat, dof, p, alpha, p >= alpha, low_counts=n < 5 * bins)


def chi2_independence(x, y, bins: int = 10, alpha: float = 0.025) -> TestReport:
    """Pearson contingency test of independence; empty rows/columns are dropped."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if x.size == 0 or x.max() == x.min() or y.max() == y.min():
        return _reject_degenerate(alpha, (bins - 1) ** 2)
    table = np.zeros((bins, bins))
    np.add.at(table, (_equal_width_codes(x, bins), _equal_width_codes(y, bins)), 1.0)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    r, c = table.shape
    if r < 2 or c < 2:
        return _reject_degenerate(alpha, (bins - 1) ** 2)
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / table.sum()
    stat = float(np.sum((table - expected) ** 2 / expected))
    dof = (r - 1) * (c - 1)
    p = chi2_sf(stat, dof)
    return TestReport(stat, dof, p, alpha, p >= alpha, low_counts=bool(np.any(expected < 5)))


def uniform_accept_ratio(q_table, bins: int = 10, alpha: float = 0.025) -> float:
    """Fraction of rows (state-action pairs) whose ensemble values pass the uniformity test."""
    q = np.atleast_2d(q_table)
    return float(np.mean([chi2_uniform(row, bins, alpha).accept for row in q]))


def independence_accept_ratio(q_table, bins: int = 10, alpha: float = 0.025) -> float:
    """Fraction of member pairs (i < j) whose columns pass the independence test."""
    q = np.atleast_2d(q_table)
    n = q.shape[1]
    results = [chi2_independence(q[:, i], q[:, j], bins, alpha).accept
               for i in range(n) for j in range(i + 1, n)]
    return float(np.mean(results)) if results else 0.0


@dataclass
class CorrelationMatrix:
    values: np.ndarray
    undefined: np.ndarray   # bool mask of entries involving a zero-variance column

    def mean_abs_offdiag(self) -> float:
        n = self.values.shape[0]
        mask = ~np.eye(n, dtype=bool) & ~self.undefined
        return float(np.mean(np.abs(self.values[mask]))) if mask.any() else float("nan")


def pearson_matrix(q_table) -> CorrelationMatrix:
    """Correlation between ensemble members (columns) over the rows of ``q_table``."""
    q = np.asarray(q_table, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] < 2:
        raise ValueError("need a (B >= 2, N) table")
    centered = q - q.mean(axis=0)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    flat = norms == 0.0
    safe = np.where(flat, 1.0, norms)
    z = centered / safe
    corr = np.clip(z.T @ z, -1.0, 1.0)
    corr = 0.5 * (corr + corr.T)
    undefined = flat[:, None] | flat[None, :]
    corr[undefined] = np.nan
    np.fill_diagonal(corr, 1.0)
    return CorrelationMatrix(corr, undefined)


@dataclass
class SpikeHistogram:
    edges: np.ndarray
    counts: np.ndarray
    total_spikes: int
    n_eigenvalues: int
    spikes: np.ndarray = field(repr=False, default=None)

    @property
    def spike_rate(self) -> float:
        return self.total_spikes / self.n_eigenvalues if self.n_eigenvalues else 0.0

    def rows(self):
        return [(float(self.edges[i]), float(self.edges[i + 1]), int(self.counts[i]))
                for i in range(self.counts.size)]


def spike_histogram_from_q(q_table, bins: int = 20, perm_seed: int = 0,
                           limit: float = 4.0) -> SpikeHistogram:
    """Run build/normalise/eigh on every row of a (B, N) Q-table and histogram |lambda| > 2."""
    lam = batch_spectra(q_table, perm_seed=perm_seed)
    spikes = lam[np.abs(lam) > 2.0]
    counts, edges = np.histogram(np.clip(spikes, -limit, limit), bins=bins, range=(-limit, limit))
    return SpikeHistogram(edges, counts, int(spikes.size), int(lam.size), spikes)


def spike_histogram(ensemble, states, actions, rho: float = DEFAULT_RHO, eps: float = DEFAULT_EPS,
                    bins: int = 20, perm_seed: int = 0) -> SpikeHistogram:
    """Spike histogram of a trained ensemble evaluated at (state, action) rows.

    ``rho`` and ``eps`` are accepted for symmetry with the loss; spikes are a
    property of the spectrum alone.
    """
    q = ensemble.q_sa(states, actions).T
    return spike_histogram_from_q(q, bins=bins, perm_seed=perm_seed)


def bias_stats(ensemble, world, policy, eval_pairs, n_rollouts: int, seed=0, horizon=None,
               rule: str | None = None):
    """Mean and std of (ens_eval(Q) - MC return) / max(|mean MC return|, 1e-6)."""
    from .worlds import mc_return

    pairs = list(eval_pairs)
    if not pairs:
        raise ValueError("empty evaluation set")
    if horizon is None:
        horizon = int(math.ceil(math.log(1e-4) / math.log(world.gamma))) + 1
    rng = np.random.default_rng(seed)
    states = np.array([s for s, _ in pairs])
    actions = np.array([a for _, a in pairs])
    predicted = ensemble.eval_sa(world.features(states), actions, rule)
    returns = np.array([mc_return(world, policy, int(s), int(a), horizon, n_rollouts, rng)
                        for s, a in pairs])
    scale = max(abs(float(returns.mean())), 1e-6)
    bias = (predicted - returns) / scale
    return float(bias.mean()), float(bias.std())


def erfc_reference(psi) -> np.ndarray:
    """Asymptotic optimal detection error erfc(sqrt(-log(1 - psi^2)) / 4)."""
    psi = np.atleast_1d(np.asarray(psi, dtype=np.float64))
    return np.array([math.erfc(0.25 * math.sqrt(-math.log1p(-p * p))) for p in psi])


@dataclass
class DetectionCurve:
    psi_grid: np.ndarray
    empirical_error: np.ndarray
    erfc_reference: np.ndarray
    type1: np.ndarray
    type2: np.ndarray
    kl_threshold: float
    trials: int

    def std_error(self) -> np.ndarray:
        """Binomial standard error of each error estimate (sum of two proportions)."""
        t = self.trials
        return np.sqrt(self.type1 * (1 - self.type1) / t + self.type2 * (1 - self.type2) / t)

    def rows(self):
        return [(float(p), float(e), float(r))
                for p, e, r in zip(self.psi_grid, self.empirical_error, self.erfc_reference)]


def _kl_statistic(psi: float, n_dim: int, seed) -> float:
    x = sample_spiked_wishart(SpikedModelParams(psi=psi, n=n_dim), seed=seed)
    return kl_to_semicircle(scaled_spectrum(x))[0]


def calibrate_kl_threshold(n_dim: int, draws: int = 500, seed: int = 0, quantile: float = 0.95) -> float:
    stats = [_kl_statistic(0.0, n_dim, [seed, 1, k]) for k in range(draws)]
    return float(np.quantile(stats, quantile))


def detection_experiment(psi_grid, n_dim: int = 64, trials: int = 2000,
                         kl_threshold: float | None = None, seed: int = 0,
                         calibration_draws: int = 500) -> DetectionCurve:
    """Error of the test 1(KL >= threshold) between pure noise and the spiked model."""
    if n_dim < 64:
        raise ValueError("n_dim must be >= 64")
    psi_grid = np.asarray(psi_grid, dtype=np.float64)
    if kl_threshold is None:
        kl_threshold = calibrate_kl_threshold(n_dim, calibration_draws, seed)
    null = np.array([_kl_statistic(0.0, n_dim, [seed, 2, k]) for k in range(trials)])
    type1 = float(np.mean(null >= kl_threshold))
    t1, t2 = [], []
    for j, psi in enumerate(psi_grid):
        alt = np.array([_kl_statistic(float(psi), n_dim, [seed, 3, j, k]) for k in range(trials)])
        t1.append(type1)
        t2.append(float(np.mean(alt < kl_threshold)))
    t1, t2 = np.array(t1), np.array(t2)
    return DetectionCurve(psi_grid, t1 + t2, erfc_reference(psi_grid), t1, t2,
                          float(kl_threshold), trials)
