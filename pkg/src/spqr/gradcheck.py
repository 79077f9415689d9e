"""Central finite-difference checks for every hand-written backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .eigen import SymMatrix, eigh, eigh_backward_full, eigh_backward_values
from .loss import spqr_loss_batch, spqr_loss_single


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def rel_error(analytic, numeric, atol: float = 1e-6) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, atol)."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), atol)
    return float(np.max(np.abs(a - f) / denom))


def _sym_fd(fn, a: np.ndarray, h: float) -> np.ndarray:
    """dL/dA for symmetric perturbations; off-diagonal entries are halved so the result
    is comparable with a gradient that treats A_ij and A_ji as one variable split evenly."""
    d = a.shape[0]
    out = np.zeros_like(a)
    for i in range(d):
        for j in range(i + 1):
            e = np.zeros_like(a)
            e[i, j] = e[j, i] = h
            val = (fn(a + e) - fn(a - e)) / (2 * h)
            if i == j:
                out[i, i] = val
            else:
                out[i, j] = out[j, i] = 0.5 * val
    return out


def _random_sym(rng, d):
    x = rng.standard_normal((d, d))
    return 0.5 * (x + x.T)


def check_eigenvalues(seed=0, n_matrices: int = 20, dim: int = 8, h: float = 1e-6) -> SuiteResult:
    rng = np.random.default_rng([seed, 0])
    worst = 0.0
    for _ in range(n_matrices):
        a = _random_sym(rng, dim)
        c = rng.standard_normal(dim)

        def loss(m):
            return float(c @ eigh(SymMatrix(m)).eigenvalues)

        grad = eigh_backward_values(eigh(SymMatrix(a)), c)
        worst = max(worst, rel_error(grad, _sym_fd(loss, a, h)))
    return SuiteResult("sym_eigen.values", worst, 1e-4, n_matrices)


def check_eigenvectors(seed=0, n_matrices: int = 20, dim: int = 8, h: float = 1e-6) -> SuiteResult:
    rng = np.random.default_rng([seed, 1])
    worst = 0.0
    for _ in range(n_matrices):
        a = _random_sym(rng, dim)
        c = rng.standard_normal(dim)
        w = rng.standard_normal((dim, dim))

        def loss(m):
            sp = eigh(SymMatrix(m))
            return float(c @ sp.eigenvalues + np.sum(w * sp.eigenvectors))

        grad = eigh_backward_full(eigh(SymMatrix(a)), c, w)
        worst = max(worst, rel_error(grad, _sym_fd(loss, a, h)))
    return SuiteResult("sym_eigen.full", worst, 1e-3, n_matrices)


def check_spqr(seed=0, n_cases: int = 10, h: float = 1e-6) -> SuiteResult:
    rng = np.random.default_rng([seed, 2])
    worst = 0.0
    for k in range(n_cases):
        n = int(rng.integers(3, 46))
        q = rng.standard_normal(n)
        out = spqr_loss_single(q, perm_seed=k)
        fd = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd[i] = (spqr_loss_single(q + e, perm_seed=k).loss - spqr_loss_single(q - e, perm_seed=k).loss) / (2 * h)
        worst = max(worst, rel_error(out.grad_q, fd))
    # one batched case through the vectorised path
    qm = rng.standard_normal((4, 10))
    _, g = spqr_loss_batch(qm, perm_seed=seed)
    fd = np.empty_like(qm)
    for idx in np.ndindex(qm.shape):
        e = np.zeros_like(qm)
        e[idx] = h
        fd[idx] = (spqr_loss_batch(qm + e, perm_seed=seed)[0] - spqr_loss_batch(qm - e, perm_seed=seed)[0]) / (2 * h)
    worst = max(worst, rel_error(g, fd))
    return SuiteResult("spqr_loss", worst, 1e-3, n_cases + 1)


def check_mlp(seed=0, h: float = 1e-6) -> SuiteResult:
    rng = np.random.default_rng([seed, 3])
    worst = 0.0
    cases = 0
    for activation in ("tanh", "relu"):
        for stacked in (False, True):
            sizes = (3, 7, 5, 2)
            params = nn.init_stack(sizes, 3, seed, activation) if stacked else nn.init(sizes, seed, activation)
            for b in params.biases:
                b += 0.1 * rng.standard_normal(b.shape)
            x = rng.standard_normal((6, 3))
            out, cache = nn.forward(params, x)
            w = rng.standard_normal(out.shape)
            grads, gx = nn.backward(params, cache, w)

            def loss(p, xx=x):
                return float(np.sum(w * nn.forward(p, xx)[0]))

            for arr, g in zip(params.arrays(), grads):
                fd = np.empty_like(arr)
                for idx in np.ndindex(arr.shape):
                    old = arr[idx]
                    arr[idx] = old + h
                    up = loss(params)
                    arr[idx] = old - h
                    down = loss(params)
                    arr[idx] = old
                    fd[idx] = (up - down) / (2 * h)
                worst = max(worst, rel_error(g, fd))
            fdx = np.empty_like(x)
            for idx in np.ndindex(x.shape):
                e = np.zeros_like(x)
                e[idx] = h
                fdx[idx] = (loss(params, x + e) - loss(params, x - e)) / (2 * h)
            worst = max(worst, rel_error(gx, fdx))
            cases += 1
    return SuiteResult("tiny_nn", worst, 1e-3, cases)


def run_all(seed=0) -> list[SuiteResult]:
    return [check_eigenvalues(seed), check_eigenvectors(seed), check_spqr(seed), check_mlp(seed)]
