"""Dense symmetric eigendecomposition and its backward pass.

The solver is Householder tridiagonalisation followed by implicit-shift QL,
compiled with numba.  ``eigh_batch`` runs the same kernel over a stack of
small matrices, which is the hot path of the SPQR loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

SYMMETRY_RTOL = 1e-9
DEGENERATE_GAP = 1e-8


class DegenerateSpectrumError(ValueError):
    """Raised when eigenvector gradients are requested for a (near) repeated eigenvalue."""


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """Real symmetric matrix.  Symmetry is exact: the upper triangle mirrors the lower."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * scale:
            raise ValueError("matrix is not symmetric")
        lower = np.tril(a)
        a = lower + np.tril(a, -1).T
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def symmetrized(cls, a) -> "SymMatrix":
        a = np.asarray(a, dtype=np.float64)
        return cls(0.5 * (a + a.T))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending eigenvalues with orthonormal eigenvectors stored as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def source_dim(self) -> int:
        return self.eigenvalues.shape[0]

    @classmethod
    def from_values(cls, values) -> "Spectrum":
        """Spectrum of diag(values); handy for tests and for spectral statistics."""
        lam = np.sort(np.asarray(values, dtype=np.float64).ravel())
        return cls(lam, np.eye(lam.size))


@numba.njit(cache=True)
def _tred2(z, d, e):
    # Householder reduction to tridiagonal form; z is overwritten by the
    # accumulated orthogonal transform.
    n = z.shape[0]
    for i in range(n - 1, 0, -1):
        l = i - 1
        h = 0.0
        scale = 0.0
        if l > 0:
            for k in range(i):
                scale += abs(z[i, k])
            if scale == 0.0:
                e[i] = z[i, l]
            else:
                for k in range(i):
                    z[i, k] /= scale
                    h += z[i, k] * z[i, k]
                f = z[i, l]
                g = -np.sqrt(h) if f >= 0.0 else np.sqrt(h)
                e[i] = scale * g
                h -= f * g
                z[i, l] = f - g
                f = 0.0
                for j in range(i):
                    z[j, i] = z[i, j] / h
                    g = 0.0
                    for k in range(j + 1):
                        g += z[j, k] * z[i, k]
                    for k in range(j + 1, i):
                        g += z[k, j] * z[i, k]
                    e[j] = g / h
                    f += e[j] * z[i, j]
                hh = f / (h + h)
                for j in range(i):
                    f = z[i, j]
                    g = e[j] - hh * f
                    e[j] = g
                    for k in range(j + 1):
                        z[j, k] -= f * e[k] + g * z[i, k]
        else:
            e[i] = z[i, l]
        d[i] = h
    d[0] = 0.0
    e[0] = 0.0
    for i in range(n):
        if d[i] != 0.0:
            for j in range(i):
                g = 0.0
                for k in range(i):
                    g += z[i, k] * z[k, j]
                for k in range(i):
                    z[k, j] -= g * z[k, i]
        d[i] = z[i, i]
        z[i, i] = 1.0
        for j in range(i):
            z[j, i] = 0.0
            z[i, j] = 0.0


@numba.njit(cache=True)
def _tql(d, e, z):
    # Implicit-shift QL on the tridiagonal (d, e); rotations accumulate into z.
    # Returns False if some eigenvalue fails to converge.
    n = d.shape[0]
    eps = 2.220446049250313e-16
    for i in range(1, n):
        e[i - 1] = e[i]
    e[n - 1] = 0.0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > 60:
                return False
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0.0 else -r))
            s = 1.0
            c = 1.0
            p = 0.0
            underflow = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                for k in range(n):
                    f = z[k, i + 1]
                    z[k, i + 1] = s * z[k, i] + c * f
                    z[k, i] = c * z[k, i] - s * f
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return True


@numba.njit(cache=True)
def _eigh_inplace(z, d):
    n = z.shape[0]
    e = np.zeros(n)
    _tred2(z, d, e)
    ok = _tql(d, e, z)
    order = np.argsort(d, kind="mergesort")
    d[:] = d[order]
    zz = z[:, order].copy()
    # sign convention: largest-magnitude entry of each column is positive
    for j in range(n):
        best = 0
        for k in range(1, n):
            if abs(zz[k, j]) > abs(zz[best, j]):
                best = k
        if zz[best, j] < 0.0:
            for k in range(n):
                zz[k, j] = -zz[k, j]
    z[:, :] = zz
    return ok


@numba.njit(cache=True)
def _eigh_batch(stack, values, vectors):
    ok = True
    for b in range(stack.shape[0]):
        vectors[b] = stack[b]
        if not _eigh_inplace(vectors[b], values[b]):
            ok = False
    return ok


def eigh_array(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose an already-symmetric ndarray; returns (values, vectors)."""
    z = np.array(a, dtype=np.float64, order="C")
    d = np.empty(z.shape[0])
    if not _eigh_inplace(z, d):
        raise np.linalg.LinAlgError("QL iteration did not converge")
    return d, z


def eigh(x: SymMatrix) -> Spectrum:
    """Ascending eigenvalues and sign-normalised orthonormal eigenvectors of ``x``."""
    if not isinstance(x, SymMatrix):
        x = SymMatrix(x)
    d, z = eigh_array(x.entries)
    return Spectrum(d, z)


def eigh_batch(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decompose a (B, D, D) stack of symmetric matrices in one compiled loop."""
    stack = np.ascontiguousarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise ValueError(f"expected (B, D, D), got {stack.shape}")
    values = np.empty(stack.shape[:2])
    vectors = np.empty_like(stack)
    if not _eigh_batch(stack, values, vectors):
        raise np.linalg.LinAlgError("QL iteration did not converge")
    return values, vectors


def eigvalsh(x) -> np.ndarray:
    if isinstance(x, SymMatrix):
        x = x.entries
    return eigh_array(x)[0]


def eigh_backward_values(spectrum: Spectrum, g) -> np.ndarray:
    """Gradient w.r.t. the input matrix of a loss that depends on eigenvalues only.

    With dL/dU = 0 the eigenvector term drops out and dL/dX = U diag(g) U^T,
    which is well defined even for repeated eigenvalues.
    """
    g = np.asarray(g, dtype=np.float64)
    u = spectrum.eigenvectors
    if g.shape != spectrum.eigenvalues.shape:
        raise ValueError(f"gradient has shape {g.shape}, spectrum has {spectrum.eigenvalues.shape}")
    out = (u * g) @ u.T
    # exact symmetry
    return np.tril(out) + np.tril(out, -1).T


def eigh_backward_full(spectrum: Spectrum, g_values, g_vectors) -> np.ndarray:
    """Full eigendecomposition backward including the eigenvector term.

    dL/dX = U {(K^T o U^T dL/dU)_sym + diag(dL/dlambda)} U^T with
    K_ij = 1/(lambda_i - lambda_j) off the diagonal.  The symmetric part is
    taken after the Hadamard product: K is antisymmetric, so K^T o A_sym is
    antisymmetric and would vanish under the final symmetrisation.
    """
    lam = spectrum.eigenvalues
    u = spectrum.eigenvectors
    g_values = np.asarray(g_values, dtype=np.float64)
    g_vectors = np.asarray(g_vectors, dtype=np.float64)
    n = lam.size
    if g_values.shape != (n,) or g_vectors.shape != (n, n):
        raise ValueError("gradient shapes do not match the spectrum")
    gap = lam[:, None] - lam[None, :]
    off = ~np.eye(n, dtype=bool)
    if np.any(np.abs(gap[off]) <= DEGENERATE_GAP):
        raise DegenerateSpectrumError("eigenvalue gap below 1e-8; eigenvector gradient undefined")
    k = np.zeros((n, n))
    k[off] = 1.0 / gap[off]
    a = k.T * (u.T @ g_vectors)
    inner = 0.5 * (a + a.T) + np.diag(g_values)
    out = u @ inner @ u.T
    return np.tril(out) + np.tril(out, -1).T
