import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from spqr.diagnostics import (bias_stats, chi2_independence, chi2_sf, chi2_uniform,
                              detection_experiment, erfc_reference, gammaincc,
                              independence_accept_ratio, pearson_matrix, spike_histogram_from_q,
                              uniform_accept_ratio)
from spqr.worlds import GridWorld, greedy_table, value_iteration


# ---------------------------------------------------------------- incomplete gamma

@pytest.mark.parametrize("a", [0.5, 1.0, 4.5, 12.0, 40.5])
@pytest.mark.parametrize("x", [1e-3, 0.7, 3.0, 11.0, 60.0])
def test_gammaincc_matches_scipy(a, x):
    assert gammaincc(a, x) == pytest.approx(special.gammaincc(a, x), abs=1e-10)


def test_chi2_sf_matches_scipy():
    for dof in (1, 4, 9, 81):
        for stat in (0.1, dof, 3.0 * dof):
            assert chi2_sf(stat, dof) == pytest.approx(stats.chi2.sf(stat, dof), abs=1e-10)


def test_gammaincc_edges():
    assert gammaincc(2.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        gammaincc(0.0, 1.0)


# ---------------------------------------------------------------- chi-square tests

def test_balanced_counts_give_zero_statistic():
    x = np.repeat(np.arange(10) + 0.5, 5)
    r = chi2_uniform(x, bins=10)
    assert r.statistic == pytest.approx(0.0, abs=1e-12) and r.accept and r.dof == 9


def test_uniform_report_consistency():
    r = chi2_uniform(np.random.default_rng(0).uniform(size=200), bins=10, alpha=0.025)
    assert r.accept == (r.p_value >= r.alpha)
    assert 0.0 <= r.p_value <= 1.0


def test_uniform_calibration_small():
    rng = np.random.default_rng(1)
    rate = np.mean([chi2_uniform(rng.uniform(size=50), 10).accept for _ in range(2000)])
    assert rate == pytest.approx(0.975, abs=0.02)


def test_uniform_rejects_concentrated_samples():
    x = np.concatenate([np.zeros(95), np.ones(5)])
    assert not chi2_uniform(x, bins=10).accept


def test_constant_samples_are_degenerate_reject():
    r = chi2_uniform(np.full(20, 3.0))
    assert r.degenerate and not r.accept
    r = chi2_independence(np.full(20, 1.0), np.arange(20.0))
    assert r.degenerate and not r.accept


def test_independence_rejects_identity():
    x = np.random.default_rng(2).uniform(size=1000)
    assert not chi2_independence(x, x, bins=10).accept


def test_independence_calibration_small():
    rng = np.random.default_rng(3)
    rate = np.mean([chi2_independence(rng.uniform(size=1000), rng.uniform(size=1000), 10).accept
                    for _ in range(500)])
    assert rate == pytest.approx(0.975, abs=0.03)


def test_independence_matches_scipy_contingency():
    rng = np.random.default_rng(4)
    x, y = rng.uniform(size=500), rng.uniform(size=500)
    r = chi2_independence(x, y, bins=4)
    cx = np.clip(np.floor((x - x.min()) / np.ptp(x) * 4), 0, 3).astype(int)
    cy = np.clip(np.floor((y - y.min()) / np.ptp(y) * 4), 0, 3).astype(int)
    table = np.zeros((4, 4))
    np.add.at(table, (cx, cy), 1)
    ref = stats.chi2_contingency(table, correction=False)
    assert r.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert r.p_value == pytest.approx(ref.pvalue, abs=1e-10)


def test_independence_shape_and_bins_checks():
    with pytest.raises(ValueError):
        chi2_independence(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        chi2_uniform(np.arange(5.0), bins=1)


def test_accept_ratios_on_tables():
    rng = np.random.default_rng(5)
    q = rng.uniform(size=(400, 6))
    assert independence_accept_ratio(q, bins=5) > 0.8
    collapsed = np.repeat(rng.normal(size=(400, 1)), 6, axis=1)
    assert independence_accept_ratio(collapsed, bins=5) == 0.0
    assert uniform_accept_ratio(np.ones((3, 10))) == 0.0
    assert independence_accept_ratio(np.zeros((5, 1))) == 0.0


# ---------------------------------------------------------------- Pearson

def test_pearson_collapsed_columns():
    c = pearson_matrix(np.repeat(np.arange(10.0)[:, None], 4, axis=1))
    assert np.allclose(c.values, 1.0)
    assert c.mean_abs_offdiag() == pytest.approx(1.0)


def test_pearson_flags_constant_columns():
    q = np.column_stack([np.arange(5.0), np.full(5, 2.0), np.arange(5.0) ** 2])
    c = pearson_matrix(q)
    assert c.undefined[1].all() and c.undefined[:, 1].all()
    assert np.isnan(c.values[0, 1]) and c.values[1, 1] == 1.0


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_pearson_matrix_properties(seed, n):
    q = np.random.default_rng(seed).normal(size=(20, n))
    c = pearson_matrix(q).values
    assert np.allclose(c, c.T)
    assert np.all(np.diag(c) == 1.0) and np.all(np.abs(c) <= 1.0)
    assert np.allclose(c, np.corrcoef(q.T), atol=1e-12)


def test_pearson_rejects_single_row():
    with pytest.raises(ValueError):
        pearson_matrix(np.ones((1, 3)))


# ---------------------------------------------------------------- bias


class _TableEnsemble:
    """Ensemble stand-in that returns a fixed Q-table (plus an offset) for every member."""

    def __init__(self, world, table, offset=0.0):
        self.world, self.table, self.offset = world, table, offset

    def eval_sa(self, feats, actions, rule=None):
        w = self.world.width
        cells = np.rint(feats * (np.array([w, self.world.height]) - 1)).astype(int)
        states = np.array([self.world.index(tuple(c)) for c in cells])
        return self.table[states, actions] + self.offset


@pytest.fixture(scope="module")
def det_world():
    w = GridWorld(p_slip=0.0, gamma=0.9)
    return w, value_iteration(w)


def test_bias_of_exact_q_is_zero(det_world):
    w, q = det_world
    pairs = [(s, a) for s in w.open_states()[:6] for a in range(4)]
    mean, std = bias_stats(_TableEnsemble(w, q), w, greedy_table(q), pairs, n_rollouts=3, seed=0)
    assert abs(mean) < 1e-3 and std < 1e-3


def test_bias_of_shifted_q(det_world):
    w, q = det_world
    pairs = [(s, a) for s in w.open_states()[:6] for a in range(4)]
    mean, _ = bias_stats(_TableEnsemble(w, q, 1.0), w, greedy_table(q), pairs, n_rollouts=3, seed=0)
    truth = np.array([q[s, a] for s, a in pairs])
    assert mean == pytest.approx(1.0 / abs(truth.mean()), rel=1e-3)
    with pytest.raises(ValueError):
        bias_stats(_TableEnsemble(w, q), w, greedy_table(q), [], n_rollouts=3)


# ---------------------------------------------------------------- spike histogram

def test_iid_rows_rarely_spike():
    h = spike_histogram_from_q(np.random.default_rng(6).normal(size=(300, 45)), perm_seed=1)
    assert h.n_eigenvalues == 300 * 9
    assert h.spike_rate < 0.05
    assert h.counts.sum() == h.total_spikes


def test_collapsed_rows_have_no_spikes():
    h = spike_histogram_from_q(np.ones((50, 45)))
    assert h.total_spikes == 0 and h.spike_rate == 0.0
    assert len(h.rows()) == 20


# ---------------------------------------------------------------- detection

def test_erfc_reference_values():
    assert erfc_reference(0.0)[0] == 1.0
    expected = math.erfc(math.sqrt(-math.log(1 - 0.64)) / 4)
    assert erfc_reference(0.8)[0] == pytest.approx(expected, abs=1e-12)
    assert erfc_reference(0.8)[0] == pytest.approx(0.721, abs=1e-3)
    assert np.all(np.diff(erfc_reference(np.linspace(0, 0.99, 30))) < 0)


def test_detection_psi_zero_is_coin_flip():
    c = detection_experiment([0.0], n_dim=64, trials=300, calibration_draws=200, seed=2)
    assert 0.85 <= c.empirical_error[0] <= 1.15
    assert c.std_error()[0] > 0
    assert len(c.rows()) == 1


def test_detection_rejects_small_dim():
    with pytest.raises(ValueError):
        detection_experiment([0.0], n_dim=32)
