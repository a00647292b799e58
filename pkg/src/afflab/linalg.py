"""Small dense matrix kernels.

Singular values come from a one-sided Jacobi iteration: rotating column pairs
of A until they are mutually orthogonal is the same as diagonalising AᵀA by
Jacobi rotations, without ever forming AᵀA (which would square the condition
number). Batched routines used by the word engine live at the bottom.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InputError

MAX_DIM = 8
TINY_SINGULAR = 1e-300

Matrix = np.ndarray


def as_matrix(M, max_dim: int = MAX_DIM) -> Matrix:
    """Validate and return a square float matrix."""
    A = np.asarray(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] < 1:
        raise InputError("matrix dimension must be at least 1")
    if A.shape[0] > max_dim:
        raise InputError(f"dimension {A.shape[0]} exceeds the configured cap {max_dim}")
    if not np.all(np.isfinite(A)):
        raise InputError("matrix has non-finite entries")
    return A


@dataclass(frozen=True)
class SingularData:
    values: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def norm(self) -> float:
        return float(self.values[0])

    @property
    def smallest(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class Subspace:
    """Subspace of R^n stored as an n×r matrix with orthonormal columns."""

    basis: np.ndarray

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def span(cls, vectors, tol: float = 1e-10) -> "Subspace":
        """Orthonormal basis for the column span of `vectors`."""
        V = np.asarray(vectors, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if V.size == 0 or not np.all(np.isfinite(V)):
            raise InputError("degenerate subspace basis")
        U, sv, _ = np.linalg.svd(V, full_matrices=False)
        if sv[0] == 0.0:
            raise InputError("degenerate subspace basis")
        r = int(np.sum(sv > tol * sv[0]))
        return cls(U[:, :r].copy())

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(np.eye(n))

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def distance(self, other: "Subspace") -> float:
        """Sine of the largest principal angle (1.0 when ranks differ)."""
        if self.rank != other.rank or self.ambient_dim != other.ambient_dim:
            return 1.0
        return float(np.linalg.norm(self.projector() - other.projector(), 2))

    def contains(self, v, tol: float = 1e-8) -> bool:
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        if n == 0:
            return True
        r = v - self.basis @ (self.basis.T @ v)
        return bool(np.linalg.norm(r) <= tol * n)


def _jacobi_singular_values(A: np.ndarray, max_sweeps: int = 60) -> np.ndarray:
    U = A.copy()
    d = U.shape[1]
    eps = np.finfo(float).eps
    for _ in range(max_sweeps):
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                up = U[:, p]
                uq = U[:, q]
                alpha = up @ up
                beta = uq @ uq
                gamma = up @ uq
                if gamma == 0.0 or abs(gamma) <= eps * math.sqrt(alpha * beta):
                    continue
                rotated = True
                diff = float(beta - alpha)
                if abs(diff) > 1e150 * abs(gamma):
                    t = float(gamma) / diff  # tiny rotation, avoid overflowing zeta
                else:
                    zeta = diff / (2.0 * float(gamma))
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                sn = c * t
                new_p = c * up - sn * uq
                new_q = sn * up + c * uq
                U[:, p] = new_p
                U[:, q] = new_q
        if not rotated:
            break
    return np.sort(np.linalg.norm(U, axis=0))[::-1]


def svd(M) -> SingularData:
    """Singular values of an invertible matrix, sorted non-increasing."""
    A = as_matrix(M)
    # scale first so squared column norms cannot overflow or underflow
    scale = float(np.max(np.abs(A)))
    if scale == 0.0:
        raise InputError("matrix is zero, not invertible")
    values = _jacobi_singular_values(A / scale) * scale
    if len(values) > 1 and values[-1] < 1e-140 * scale and values[-2] > 0:
        # σ_d from |det| keeps relative accuracy where the squared column norm underflows
        sign, logdet = np.linalg.slogdet(A)
        if sign != 0:
            values[-1] = min(values[-2], math.exp(logdet - float(np.sum(np.log(values[:-1])))))
    if values[-1] < TINY_SINGULAR:
        raise InputError(
            f"smallest singular value {values[-1]:.3e} is below {TINY_SINGULAR:g}; "
            "matrix is singular or underflows")
    return SingularData(values)


def phi_from_singular_values(values, s: float) -> float:
    """Singular value function evaluated on a sorted singular value vector."""
    sv = np.asarray(values, dtype=float)
    d = len(sv)
    if s < 0:
        raise InputError("s must be non-negative")
    if s >= d:
        return float(np.prod(sv) ** (s / d))
    k = int(math.floor(s))
    frac = s - k
    val = float(np.prod(sv[:k]))
    if frac > 0:
        val *= float(sv[k]) ** frac
    return val


def phi_s(M, s: float) -> float:
    """φ^s(M) = σ_1⋯σ_⌊s⌋ σ_⌈s⌉^{s−⌊s⌋} for s ≤ d and |det M|^{s/d} beyond."""
    if s < 0:
        raise InputError("s must be non-negative")
    return phi_from_singular_values(svd(M).values, s)


@lru_cache(maxsize=None)
def combinations_index(d: int, k: int) -> tuple:
    return tuple(itertools.combinations(range(d), k))


def exterior_power(M, k: int) -> Matrix:
    """k-th compound matrix: all k×k minors, rows and columns in lexicographic order."""
    A = as_matrix(M)
    d = A.shape[0]
    if not (1 <= k <= d):
        raise InputError(f"exterior degree {k} outside 1..{d}")
    return exterior_power_batch(A[None], k)[0]


def exterior_power_batch(mats: np.ndarray, k: int) -> np.ndarray:
    """Compound matrices for a stack (B, d, d); k = 0 gives 1×1 identities."""
    B, d, _ = mats.shape
    if k == 0:
        return np.ones((B, 1, 1))
    if k == 1:
        return mats.copy()
    idx = np.array(combinations_index(d, k))
    c = len(idx)
    rows = idx[:, None, :, None]
    cols = idx[None, :, None, :]
    sub = mats[:, rows, cols]  # (B, c, c, k, k)
    return np.linalg.det(sub).reshape(B, c, c)


def phi_via_exterior(M, s: float) -> float:
    """φ^s through operator norms of exterior powers, for 0 ≤ s < d."""
    A = as_matrix(M)
    d = A.shape[0]
    if s < 0 or s >= d:
        raise InputError(f"phi_via_exterior needs 0 <= s < d = {d}; use phi_s")
    k = int(math.floor(s))
    frac = s - k

    def ext_norm(j):
        if j == 0:
            return 1.0
        return float(np.linalg.norm(exterior_power(A, j), 2))

    val = ext_norm(k) ** (1.0 - frac)
    if frac > 0:
        val *= ext_norm(k + 1) ** frac
    return val


def restricted_norm(M, W: Subspace) -> float:
    """Operator norm of M restricted to the subspace W."""
    A = np.asarray(M, dtype=float)
    Q = np.asarray(W.basis, dtype=float)
    if Q.shape[0] != A.shape[1]:
        raise InputError("subspace ambient dimension does not match the matrix")
    gram = Q.T @ Q
    if not np.allclose(gram, np.eye(Q.shape[1]), atol=1e-8):
        raise InputError("subspace basis is not orthonormal")
    return float(np.linalg.norm(A @ Q, 2))


def abs_eigenvalues(M) -> np.ndarray:
    """Moduli of eigenvalues, sorted non-increasing."""
    return np.sort(np.abs(np.linalg.eigvals(as_matrix(M))))[::-1]


# -- batched kernels ---------------------------------------------------------

def log_singular_values_batch(mats: np.ndarray, logdet: np.ndarray | None = None) -> np.ndarray:
    """Log singular values (descending) for a stack of d×d matrices.

    The smallest value is recovered as log|det| minus the others, which keeps
    relative accuracy when σ_d is far below σ_1. Passing `logdet` (accumulated
    exactly along a product) avoids recomputing determinants of products.
    """
    mats = np.asarray(mats, dtype=float)
    B, d, _ = mats.shape
    if logdet is None:
        _, logdet = np.linalg.slogdet(mats)
    with np.errstate(divide="ignore"):
        if d == 1:
            return np.log(np.abs(mats[:, 0, :1]))
        if d == 2:
            a = mats[:, 0, 0]
            b = mats[:, 0, 1]
            c = mats[:, 1, 0]
            e = mats[:, 1, 1]
            q = np.hypot(0.5 * (a + e), 0.5 * (c - b))
            r = np.hypot(0.5 * (a - e), 0.5 * (c + b))
            l1 = np.log(q + r)
            return np.stack([l1, logdet - l1], axis=1)
        sv = np.linalg.svd(mats, compute_uv=False)
        out = np.log(sv)
        out[:, -1] = logdet - out[:, :-1].sum(axis=1)
        return out


def log_phi_from_logsv(logsv: np.ndarray, s: float) -> np.ndarray:
    """log φ^s for each row of a (B, d) array of descending log singular values."""
    d = logsv.shape[1]
    if s >= d:
        return logsv.sum(axis=1) * (s / d)
    k = int(math.floor(s))
    frac = s - k
    out = logsv[:, :k].sum(axis=1) if k > 0 else np.zeros(logsv.shape[0])
    if frac > 0:
        out = out + frac * logsv[:, k]
    return out
