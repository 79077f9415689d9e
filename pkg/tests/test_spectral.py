import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from spqr.eigen import Spectrum, eigvalsh
from spqr.spectral import (SpikedModelParams, count_spikes, esd, kl_to_semicircle, ks_distance,
                           sample_goe, sample_spiked_wishart, scaled_spectrum, semicircle_cdf,
                           semicircle_pdf, semicircle_quantile, soft_semicircle_pdf, standardize)


def scaled_goe(dim, seed):
    return eigvalsh(sample_goe(dim, 1.0, seed).entries / math.sqrt(dim))


# ---------------------------------------------------------------- GOE sampling

def test_goe_single_entry():
    x = sample_goe(1, 1.0, seed=7)
    assert x.entries.shape == (1, 1)
    assert x.entries[0, 0] == x.entries.T[0, 0]


def test_goe_deterministic():
    a = sample_goe(32, 1.0, seed=3).entries
    b = sample_goe(32, 1.0, seed=3).entries
    assert np.array_equal(a, b)


def test_goe_entry_variances():
    x = sample_goe(400, 1.5, seed=1).entries
    off = x[np.triu_indices(400, 1)]
    assert np.var(off) == pytest.approx(1.5**2, rel=0.02)
    assert np.var(np.diag(x)) == pytest.approx(2 * 1.5**2, rel=0.2)


def test_goe_edge_frequency():
    # Monte-Carlo oracle: every one of 20 seeds stays inside |lambda| <= 2.3
    inside = [np.max(np.abs(scaled_goe(512, s))) <= 2.3 for s in range(20)]
    assert np.mean(inside) > 0.99


def test_goe_rejects_bad_args():
    with pytest.raises(ValueError):
        sample_goe(0)
    with pytest.raises(ValueError):
        sample_goe(4, sigma=0.0)


# ---------------------------------------------------------------- densities

def test_semicircle_values():
    assert semicircle_pdf(0.0, 1.0) == pytest.approx(1 / math.pi, abs=1e-12)
    assert semicircle_pdf(2.0, 1.0) == 0.0
    assert semicircle_pdf(0.0, 2.0) == pytest.approx(1 / (2 * math.pi), abs=1e-12)
    assert semicircle_pdf(3.0, 1.0) == 0.0


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_semicircle_integrates_to_one(sigma):
    total, _ = integrate.quad(lambda x: semicircle_pdf(x, sigma), -2 * sigma, 2 * sigma,
                              epsabs=1e-12, epsrel=1e-12)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("x", [-1.7, -0.3, 0.0, 0.9, 1.99])
def test_semicircle_cdf_matches_quadrature(x):
    num, _ = integrate.quad(semicircle_pdf, -2.0, x, epsabs=1e-13)
    assert semicircle_cdf(x) == pytest.approx(num, abs=1e-10)


def test_semicircle_cdf_limits():
    assert semicircle_cdf(-5.0) == 0.0
    assert semicircle_cdf(5.0) == 1.0
    assert semicircle_cdf(0.0) == pytest.approx(0.5)


def test_soft_semicircle_values():
    assert soft_semicircle_pdf(3.0, 0.5, 0.01) == pytest.approx(0.005)
    assert soft_semicircle_pdf(-3.0, 0.5, 0.01) == pytest.approx(0.005)
    assert soft_semicircle_pdf(0.0, 0.5, 0.01) == pytest.approx(0.5 / math.pi)


@pytest.mark.parametrize("rho,eps", [(0.0, 0.01), (1.0, 0.01), (0.5, 0.0)])
def test_soft_semicircle_rejects(rho, eps):
    with pytest.raises(ValueError):
        soft_semicircle_pdf(0.0, rho, eps)


@given(st.floats(-10, 10), st.floats(0.05, 0.95), st.floats(1e-4, 0.5))
def test_soft_semicircle_positive_and_even(lam, rho, eps):
    v = soft_semicircle_pdf(lam, rho, eps)
    assert v >= (1 - rho) * eps
    assert v == soft_semicircle_pdf(-lam, rho, eps)


# ---------------------------------------------------------------- ESD, KL, spikes

def test_esd_masses():
    d = esd(Spectrum.from_values([-1.0, 0.0, 1.0]))
    assert np.allclose(d.masses, 1 / 3)
    assert np.allclose(d.points, [-1, 0, 1])
    one = esd(Spectrum.from_values([0.4]))
    assert one.masses.tolist() == [1.0]
    assert one.normalization == 1.0


def test_esd_goe_ks():
    assert ks_distance(scaled_goe(512, 0)) < 0.05


def test_kl_single_point():
    loss, grad = kl_to_semicircle(Spectrum.from_values([0.0]), 0.5, 0.01)
    assert loss == pytest.approx(math.log(2 * math.pi), abs=1e-12)
    assert grad.tolist() == [0.0]


def test_kl_zero_gradient_outside_support():
    _, grad = kl_to_semicircle(np.array([-3.0, 2.5, 4.0, -2.01]))
    assert np.all(grad == 0.0)


def test_kl_gradient_finite_difference():
    rng = np.random.default_rng(11)
    lam = rng.uniform(-1.9, 1.9, size=8)
    _, grad = kl_to_semicircle(lam)
    h = 1e-6
    fd = np.array([(kl_to_semicircle(lam + h * e)[0] - kl_to_semicircle(lam - h * e)[0]) / (2 * h)
                   for e in np.eye(8)])
    assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-12)) < 1e-6


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=12), st.randoms(use_true_random=False))
def test_kl_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a = kl_to_semicircle(np.array(values))[0]
    b = kl_to_semicircle(np.array(shuffled))[0]
    assert a == pytest.approx(b, abs=1e-12)


def test_count_spikes_examples():
    assert count_spikes(Spectrum.from_values([-1, 0, 1])) == 0
    assert count_spikes(Spectrum.from_values([-1, 0, 2.5])) == 1
    assert count_spikes(Spectrum.from_values([-2.4, 0, 2.5]), margin=0.45) == 1


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=20))
def test_no_spikes_inside_support(values):
    assert count_spikes(np.array(values)) == 0


# ---------------------------------------------------------------- KS

def test_ks_single_point():
    assert ks_distance(np.array([0.0])) == pytest.approx(0.5)


def test_ks_quantile_grid():
    d = 100
    lam = np.array([semicircle_quantile(i / (d + 1)) for i in range(1, d + 1)])
    assert ks_distance(lam) < 0.02


def test_quantile_inverts_cdf():
    for q in (0.01, 0.25, 0.5, 0.9):
        assert semicircle_cdf(semicircle_quantile(q)) == pytest.approx(q, abs=1e-12)


def test_ks_decreases_with_dimension():
    means = [np.mean([ks_distance(scaled_goe(d, [d, s])) for s in range(20)]) for d in (32, 64, 128, 256, 512)]
    assert all(a > b for a, b in zip(means, means[1:]))


# ---------------------------------------------------------------- spiked model

def test_spiked_deterministic():
    p = SpikedModelParams(psi=2.0, n=32)
    assert np.array_equal(sample_spiked_wishart(p, 5).entries, sample_spiked_wishart(p, 5).entries)


def test_spiked_psi_zero_is_symmetrised_noise():
    x = sample_spiked_wishart(SpikedModelParams(psi=0.0, n=64), seed=2).entries
    rng = np.random.default_rng(2)
    rng.standard_normal(64)
    rng.standard_normal(64)
    w = rng.normal(0.0, 1.0, size=(64, 64))
    assert np.allclose(x, 0.5 * (w + w.T))


def test_spiked_psi_zero_few_spikes():
    lam = np.concatenate([scaled_spectrum(sample_spiked_wishart(SpikedModelParams(0.0, 256), s)).eigenvalues
                          for s in range(10)])
    assert count_spikes(lam) / lam.size < 0.05


def test_spiked_large_psi_detaches():
    x = sample_spiked_wishart(SpikedModelParams(psi=400.0, n=128), seed=0)
    assert scaled_spectrum(x).eigenvalues.max() > 2.0


def test_spiked_params_validation():
    with pytest.raises(ValueError):
        SpikedModelParams(psi=-1.0, n=8)
    with pytest.raises(ValueError):
        SpikedModelParams(psi=1.0, n=1)
    assert SpikedModelParams(1.0, 8, prior="rademacher").prior.value == "rademacher"


def test_rademacher_prior_runs():
    x = sample_spiked_wishart(SpikedModelParams(psi=9.0, n=64, prior="rademacher"), seed=1)
    assert x.dim == 64


def test_standardize_distinct_entries():
    x = sample_goe(6, 1.0, seed=4)
    z = standardize(x)
    tri = z[np.tril_indices(6)]
    assert tri.mean() == pytest.approx(0.0, abs=1e-12)
    assert tri.std() == pytest.approx(1.0, abs=1e-12)


@settings(deadline=None, max_examples=30)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_goe_scaled_trace_property(dim, seed):
    x = sample_goe(dim, 1.0, seed).entries
    assert eigvalsh(x).sum() == pytest.approx(np.trace(x), abs=1e-9 * max(1.0, np.linalg.norm(x)))
