"""SPQR loss: Q-values -> symmetric matrix -> spectrum -> KL to the soft semicircle.

Gradients flow back to each Q-value through the eigenvalues and through the
standardisation statistics (mean and population std of the distinct
entries).  Ensemble members not placed in the matrix get zero gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eigen import SymMatrix, eigh_batch
from .spectral import DEFAULT_EPS, DEFAULT_RHO, kl_values

SIGMA_FLOOR = 1e-6


def matrix_dim(n: int) -> int:
    """Largest D with D(D+1)/2 <= n."""
    d = (math.isqrt(1 + 8 * n) - 1) // 2
    return d


def _tri_cells(d: int) -> tuple[np.ndarray, np.ndarray]:
    # lower triangle in row-major order: (0,0), (1,0), (1,1), (2,0), ...
    rows, cols = [], []
    for p in range(d):
        for q in range(p + 1):
            rows.append(p)
            cols.append(q)
    return np.array(rows), np.array(cols)


@dataclass(frozen=True, eq=False)
class QMatrixBuild:
    matrix: SymMatrix
    index_map: np.ndarray  # (D, D) ensemble index per cell, both triangles
    perm: np.ndarray
    used: int

    @property
    def dim(self) -> int:
        return self.matrix.dim


@dataclass(frozen=True, eq=False)
class SpqrLossOut:
    loss: float
    grad_q: np.ndarray
    mu: float
    sigma: float


def _check_n(n: int):
    if n < 3:
        raise ValueError(f"SPQR needs at least 3 ensemble members, got {n}")


def permutation(n: int, perm_seed: int) -> np.ndarray:
    return np.random.default_rng(perm_seed).permutation(n)


def build_q_matrix(qvals, perm_seed: int) -> QMatrixBuild:
    q = np.asarray(qvals, dtype=np.float64).ravel()
    n = q.size
    _check_n(n)
    d = matrix_dim(n)
    used = d * (d + 1) // 2
    perm = permutation(n, perm_seed)
    rows, cols = _tri_cells(d)
    index_map = np.empty((d, d), dtype=np.int64)
    index_map[rows, cols] = perm[:used]
    index_map[cols, rows] = perm[:used]
    return QMatrixBuild(SymMatrix(q[index_map]), index_map, perm, used)


def normalize_matrix(build: QMatrixBuild, sigma_floor: float = SIGMA_FLOOR):
    """Standardise over the D(D+1)/2 distinct entries; returns (matrix, mu, sigma)."""
    a = build.matrix.entries
    tri = a[np.tril_indices(build.dim)]
    mu = float(tri.mean())
    sigma = float(tri.std())
    out = (a - mu) / max(sigma, sigma_floor)
    return SymMatrix(out), mu, sigma


def _batch_forward_backward(qmat: np.ndarray, perms: np.ndarray, rho: float, eps: float,
                            sigma_floor: float):
    """Per-row losses and per-row gradients w.r.t. the row's Q-values."""
    b, n = qmat.shape
    d = matrix_dim(n)
    used = d * (d + 1) // 2
    rows, cols = _tri_cells(d)
    idx = perms[:, :used]                      # (B, used) ensemble index per distinct cell
    vals = np.take_along_axis(qmat, idx, axis=1)
    mu = vals.mean(axis=1)
    sigma = vals.std(axis=1)
    collapsed = sigma < sigma_floor
    scale = np.maximum(sigma, sigma_floor)
    z = (vals - mu[:, None]) / scale[:, None]
    z[collapsed] = 0.0

    mats = np.zeros((b, d, d))
    mats[:, rows, cols] = z
    mats[:, cols, rows] = z
    root_d = math.sqrt(d)
    lam, vecs = eigh_batch(mats / root_d)
    loss, glam = kl_values(lam, rho, eps)

    # dL/d(matrix) = U diag(g) U^T / sqrt(D), then fold the tied cells.
    gmat = np.einsum("bik,bk,bjk->bij", vecs, glam, vecs) / root_d
    h = gmat[:, rows, cols] * np.where(rows == cols, 1.0, 2.0)
    # backward through standardisation (population std)
    gz = (h - h.mean(axis=1, keepdims=True)
          - z * np.mean(h * z, axis=1, keepdims=True)) / scale[:, None]
    gz[collapsed] = 0.0
    grad = np.zeros((b, n))
    np.put_along_axis(grad, idx, gz, axis=1)
    return loss, grad, mu, sigma


def spqr_loss_single(qvals, rho: float = DEFAULT_RHO, eps: float = DEFAULT_EPS,
                     perm_seed: int = 0, sigma_floor: float = SIGMA_FLOOR) -> SpqrLossOut:
    q = np.asarray(qvals, dtype=np.float64).ravel()
    _check_n(q.size)
    perms = permutation(q.size, perm_seed)[None, :]
    loss, grad, mu, sigma = _batch_forward_backward(q[None, :], perms, rho, eps, sigma_floor)
    return SpqrLossOut(float(loss[0]), grad[0], float(mu[0]), float(sigma[0]))


def row_permutations(b: int, n: int, perm_seed: int, row_seeds=None) -> np.ndarray:
    """Filling orders for ``b`` rows.

    By default all rows draw from one generator seeded with ``perm_seed`` (row 0
    then matches ``permutation(n, perm_seed)``).  Explicit ``row_seeds`` give
    row r the order ``permutation(n, row_seeds[r])``.
    """
    if row_seeds is not None:
        if len(row_seeds) != b:
            raise ValueError("need one seed per row")
        return np.stack([permutation(n, int(s)) for s in row_seeds])
    rng = np.random.default_rng(perm_seed)
    return rng.permuted(np.tile(np.arange(n), (b, 1)), axis=1)


def spqr_loss_batch(qmat, rho: float = DEFAULT_RHO, eps: float = DEFAULT_EPS,
                    perm_seed: int = 0, sigma_floor: float = SIGMA_FLOOR,
                    return_rows: bool = False, row_seeds=None):
    """Mean SPQR loss over batch rows (filling orders from ``row_permutations``).

    Returns ``(loss, grads)`` with grads already divided by the batch size,
    plus the per-row losses when ``return_rows`` is set.
    """
    qmat = np.atleast_2d(np.asarray(qmat, dtype=np.float64))
    b, n = qmat.shape
    if b < 1:
        raise ValueError("empty batch")
    _check_n(n)
    perms = row_permutations(b, n, perm_seed, row_seeds)
    rows, grad, _, _ = _batch_forward_backward(qmat, perms, rho, eps, sigma_floor)
    loss = float(np.sum(rows) / b)
    if return_rows:
        return loss, grad / b, rows
    return loss, grad / b


def batch_spectra(qmat, perm_seed: int = 0, sigma_floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Eigenvalues (B, D) of the standardised, 1/sqrt(D)-scaled Q-matrices."""
    qmat = np.atleast_2d(np.asarray(qmat, dtype=np.float64))
    b, n = qmat.shape
    _check_n(n)
    d = matrix_dim(n)
    used = d * (d + 1) // 2
    rows, cols = _tri_cells(d)
    idx = row_permutations(b, n, perm_seed)[:, :used]
    vals = np.take_along_axis(qmat, idx, axis=1)
    sigma = vals.std(axis=1)
    z = (vals - vals.mean(axis=1, keepdims=True)) / np.maximum(sigma, sigma_floor)[:, None]
    z[sigma < sigma_floor] = 0.0
    mats = np.zeros((b, d, d))
    mats[:, rows, cols] = z
    mats[:, cols, rows] = z
    lam, _ = eigh_batch(mats / math.sqrt(d))
    return lam
