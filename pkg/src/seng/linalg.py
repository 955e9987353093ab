"""Dense float64 kernels shared by the curvature and direction code.

Vectorization is row-major throughout: ``vec(M)`` concatenates the rows of
``M`` and ``mat`` inverts it, so ``vec(G @ A.T) == kron(g, a)`` for rank-one
factors.
"""

import numpy as np
from scipy.linalg import lapack


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised by :func:`spd_solve` when a Cholesky pivot is not positive."""

    def __init__(self, pivot):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite (pivot {pivot})")


def as_matrix(x, name="matrix"):
    """Return ``x`` as a finite 2-D float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def spd_solve(A, B):
    """Solve ``A X = B`` for symmetric positive-definite ``A`` via Cholesky.

    ``B`` may be a vector or a matrix; the result has the same shape. The
    failing pivot (0-based) is reported if the factorization breaks down.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise ValueError(f"B has {B.shape[0]} rows, A is {A.shape[0]}x{A.shape[0]}")
    if A.shape[0] == 0:
        return np.zeros_like(B)
    scale = max(np.abs(A).max(), 1.0)
    if np.abs(A - A.T).max() > 1e-12 * scale:
        raise ValueError("A is not symmetric")
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    x, info = lapack.dpotrs(c, B, lower=1)
    if info != 0:
        raise ValueError(f"dpotrs: illegal argument {-info}")
    return x


def truncated_svd(A, r):
    """Best rank-``r`` factorization ``U_r diag(S_r) V_r^T`` of ``A``."""
    A = as_matrix(A, "A")
    k = min(A.shape)
    if not 1 <= r <= k:
        raise ValueError(f"rank {r} outside [1, {k}]")
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    return U[:, :r], S[:r], Vt[:r].T


def elesum(X):
    """Sum of all entries."""
    return float(np.sum(X))


def vec(M):
    """Row-major vectorization."""
    return np.ascontiguousarray(M).reshape(-1)


def mat(z, n_G, n_A):
    """Inverse of :func:`vec`: reshape a length ``n_G*n_A`` vector to ``(n_G, n_A)``."""
    z = np.asarray(z)
    if z.ndim != 1 or z.size != n_G * n_A:
        raise ValueError(f"cannot reshape length {z.size} vector to {n_G}x{n_A}")
    return z.reshape(n_G, n_A)


# spec-facing aliases
mat_vec = vec
vec_mat = mat
