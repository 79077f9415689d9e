"""Random-matrix primitives: GOE and spiked samples, semicircle laws, ESDs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .eigen import Spectrum, SymMatrix, eigh, eigvalsh

GRAD_GUARD = 1e-3
DEFAULT_RHO = 0.5
DEFAULT_EPS = 0.01


class Prior(str, Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"


@dataclass(frozen=True)
class SpikedModelParams:
    psi: float
    n: int
    prior: Prior = Prior.GAUSSIAN
    sigma_noise: float = 1.0

    def __post_init__(self):
        if self.psi < 0:
            raise ValueError("psi must be non-negative")
        if self.n < 2:
            raise ValueError("spiked model needs n >= 2")
        if self.sigma_noise <= 0:
            raise ValueError("sigma_noise must be positive")
        object.__setattr__(self, "prior", Prior(self.prior))


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    points: np.ndarray
    masses: np.ndarray

    @property
    def normalization(self) -> float:
        return float(self.masses.sum())


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_goe(dim: int, sigma: float = 1.0, seed=0) -> SymMatrix:
    """GOE sample: off-diagonal N(0, sigma^2), diagonal N(0, 2 sigma^2)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    a = _rng(seed).normal(0.0, sigma, size=(dim, dim))
    return SymMatrix((a + a.T) / math.sqrt(2.0))


def semicircle_pdf(lam, sigma: float = 1.0):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    lam = np.asarray(lam, dtype=np.float64)
    inside = np.clip(4.0 * sigma**2 - lam**2, 0.0, None)
    out = np.sqrt(inside) / (2.0 * math.pi * sigma**2)
    return out if out.ndim else float(out)


def semicircle_cdf(lam, sigma: float = 1.0):
    lam = np.asarray(lam, dtype=np.float64)
    x = np.clip(lam, -2.0 * sigma, 2.0 * sigma)
    out = (
        0.5
        + x * np.sqrt(4.0 * sigma**2 - x**2) / (4.0 * math.pi * sigma**2)
        + np.arcsin(x / (2.0 * sigma)) / math.pi
    )
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def soft_semicircle_pdf(lam, rho: float = DEFAULT_RHO, eps: float = DEFAULT_EPS):
    """rho-weighted unit semicircle, floored at (1 - rho) * eps everywhere."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    lam = np.asarray(lam, dtype=np.float64)
    bulk = rho * np.sqrt(np.clip(4.0 - lam**2, 0.0, None)) / (2.0 * math.pi)
    out = np.maximum(bulk, (1.0 - rho) * eps)
    return out if out.ndim else float(out)


def esd(spectrum: Spectrum) -> SpectralDensity:
    lam = np.asarray(spectrum.eigenvalues, dtype=np.float64)
    if lam.size == 0:
        raise ValueError("empty spectrum")
    return SpectralDensity(lam.copy(), np.full(lam.size, 1.0 / lam.size))


def _values(spectrum) -> np.ndarray:
    if isinstance(spectrum, Spectrum):
        return spectrum.eigenvalues
    return np.asarray(spectrum, dtype=np.float64)


def kl_values(lam: np.ndarray, rho: float = DEFAULT_RHO, eps: float = DEFAULT_EPS):
    """Vectorised KL-to-soft-semicircle over the last axis; returns (loss, dloss/dlam)."""
    lam = np.asarray(lam, dtype=np.float64)
    d = lam.shape[-1]
    p = soft_semicircle_pdf(lam, rho, eps)
    loss = np.sum(np.log((1.0 / d) / p), axis=-1) / d
    inside = np.abs(lam) < 2.0 - GRAD_GUARD
    safe = np.where(inside, lam, 0.0)
    grad = np.where(inside, safe / (4.0 - safe**2), 0.0) / d
    return loss, grad


def kl_to_semicircle(spectrum, rho: float = DEFAULT_RHO, eps: float = DEFAULT_EPS):
    """Discrete KL between the ESD (mass 1/D per eigenvalue) and the soft semicircle.

    Returns ``(loss, dloss_dlambda)``.  The gradient is zeroed within
    ``GRAD_GUARD`` of the support edge, where the bulk density vanishes.
    """
    lam = _values(spectrum)
    if lam.size == 0:
        raise ValueError("empty spectrum")
    loss, grad = kl_values(lam, rho, eps)
    return float(loss), grad


def count_spikes(spectrum, margin: float = 0.0) -> int:
    lam = _values(spectrum)
    return int(np.count_nonzero(np.abs(lam) > 2.0 + margin))


def ks_distance(spectrum, sigma: float = 1.0) -> float:
    """Kolmogorov-Smirnov distance between the ESD and the semicircle CDF."""
    lam = np.sort(_values(spectrum))
    if lam.size == 0:
        raise ValueError("empty spectrum")
    d = lam.size
    cdf = semicircle_cdf(lam, sigma)
    upper = np.arange(1, d + 1) / d - cdf
    lower = cdf - np.arange(d) / d
    return float(max(upper.max(), lower.max()))


def semicircle_quantile(q: float, sigma: float = 1.0, tol: float = 1e-14) -> float:
    """Inverse semicircle CDF by bisection."""
    lo, hi = -2.0 * sigma, 2.0 * sigma
    while hi - lo > tol * sigma:
        mid = 0.5 * (lo + hi)
        if semicircle_cdf(mid, sigma) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _draw_prior(rng: np.random.Generator, prior: Prior, n: int) -> np.ndarray:
    if prior is Prior.GAUSSIAN:
        return rng.standard_normal(n)
    return rng.choice(np.array([-1.0, 1.0]), size=n)


def sample_spiked_wishart(params: SpikedModelParams, seed=0) -> SymMatrix:
    """Symmetrised spiked model (Y + Y^T)/2 with Y = sqrt(psi/N) u v^T + W."""
    rng = _rng(seed)
    n = params.n
    u = _draw_prior(rng, params.prior, n)
    v = _draw_prior(rng, params.prior, n)
    w = rng.normal(0.0, params.sigma_noise, size=(n, n))
    y = w if params.psi == 0 else math.sqrt(params.psi / n) * np.outer(u, v) + w
    return SymMatrix(0.5 * (y + y.T))


def standardize(x: SymMatrix, floor: float = 1e-6) -> np.ndarray:
    """Zero-mean, unit-std over the distinct (lower-triangle) entries."""
    a = x.entries if isinstance(x, SymMatrix) else np.asarray(x, dtype=np.float64)
    tri = a[np.tril_indices(a.shape[0])]
    mu = tri.mean()
    sd = max(tri.std(), floor)
    return (a - mu) / sd


def scaled_spectrum(x: SymMatrix, full: bool = False):
    """Spectrum of standardize(x)/sqrt(D), the scale on which the unit semicircle applies."""
    a = standardize(x)
    a = a / math.sqrt(a.shape[0])
    if full:
        return eigh(SymMatrix(a))
    return Spectrum.from_values(eigvalsh(a))


def spike_histogram_bins(values, bins: int = 20, lo: float = -4.0, hi: float = 4.0):
    """Histogram of out-of-support eigenvalues; rows of (bin_left, bin_right, count)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    v = v[np.abs(v) > 2.0]
    counts, edges = np.histogram(np.clip(v, lo, hi), bins=bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]
