"""Row-sampling sketches and embedding-quality estimates."""

from dataclasses import dataclass

import numpy as np


class DegenerateInputError(ValueError):
    """Raised when a matrix has no nonzero rows to sample from."""


@dataclass(frozen=True)
class SketchSpec:
    """How to draw a sketch.

    ``scaling="embedding"`` weights row ``i`` by ``1/sqrt(q*p_i)`` so that
    ``E[Omega^T Omega] = I``; ``scaling="inverse_prob"`` uses ``1/p_i``.
    """

    kind: str = "uniform"
    q: int = 1
    replacement: bool = True
    seed: int = 0
    scaling: str = "embedding"

    def __post_init__(self):
        if self.kind not in ("uniform", "leverage"):
            raise ValueError(f"unknown sketch kind {self.kind!r}")
        if self.scaling not in ("embedding", "inverse_prob"):
            raise ValueError(f"unknown sketch scaling {self.scaling!r}")
        if self.q < 1:
            raise ValueError("sketch size q must be >= 1")


@dataclass(frozen=True)
class SketchOperator:
    """``Omega`` of shape (q, n): row ``j`` is ``weights[j] * e_{rows[j]}^T``."""

    n: int
    rows: np.ndarray
    weights: np.ndarray

    @property
    def q(self):
        return len(self.rows)

    @classmethod
    def identity(cls, n):
        return cls(n, np.arange(n), np.ones(n))

    def is_identity(self):
        return self.q == self.n and np.array_equal(self.rows, np.arange(self.n)) and np.all(
            self.weights == 1.0)

    def to_dense(self):
        out = np.zeros((self.q, self.n))
        out[np.arange(self.q), self.rows] = self.weights
        return out


def leverage_probs(U):
    """Row-norm-squared sampling probabilities of ``U``."""
    U = np.asarray(U, dtype=np.float64)
    norms = np.einsum("ij,ij->i", U, U) if U.ndim == 2 else U * U
    total = norms.sum()
    if not total > 0:
        raise DegenerateInputError("all rows of U are zero")
    return norms / total


def build_sketch(spec, p=None, n=None, rng=None):
    """Draw a :class:`SketchOperator` according to ``spec``.

    ``p`` is used for ``kind="leverage"``; uniform sketches need only ``n``.
    Zero-probability rows are never selected. ``rng`` overrides the
    generator seeded from ``spec.seed``.
    """
    if spec.kind == "uniform" or p is None:
        if n is None:
            if p is None:
                raise ValueError("need n or p")
            n = len(p)
        p = np.full(n, 1.0 / n)
    else:
        p = np.asarray(p, dtype=np.float64)
        n = len(p)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("p is not a probability vector")
    q = spec.q
    support = np.count_nonzero(p)
    if not spec.replacement and q > support:
        raise ValueError(f"cannot draw {q} rows without replacement from {support} candidates")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    if spec.replacement:
        rows = rng.choice(n, size=q, replace=True, p=p)
    elif q == n:
        rows = np.arange(n)
    else:
        rows = rng.choice(n, size=q, replace=False, p=p)
        rows.sort()
    pr = p[rows]
    if spec.scaling == "embedding":
        weights = 1.0 / np.sqrt(q * pr)
    else:
        weights = 1.0 / pr
    return SketchOperator(n, rows, weights)


def apply_sketch(op, M):
    """``Omega @ M`` without forming ``Omega``; ``M`` is a vector or n-row matrix."""
    M = np.asarray(M)
    if M.shape[0] != op.n:
        raise ValueError(f"sketch acts on {op.n} rows, got {M.shape[0]}")
    out = M[op.rows]
    if M.ndim == 1:
        return out * op.weights
    return out * op.weights.reshape((-1,) + (1,) * (M.ndim - 1))


def column_basis(U, rtol=1e-12):
    """Orthonormal basis of range(U) from its SVD."""
    U = np.asarray(U, dtype=np.float64)
    if not np.any(U):
        raise DegenerateInputError("U is zero")
    N, S, _ = np.linalg.svd(U, full_matrices=False)
    keep = S > rtol * S[0] * max(U.shape)
    return N[:, keep]


def sketch_diagnostics(op, U, v):
    """Measured subspace-embedding distortion and multiplication error.

    Returns ``(eta, eps)`` with ``eta = ||N^T W N - I||_2`` and
    ``eps = ||N^T W v - N^T v||^2 / ||v||^2`` where ``W = Omega^T Omega`` and
    ``N`` spans the columns of ``U``.
    """
    N = column_basis(U)
    SN = apply_sketch(op, N)
    eta = float(np.linalg.norm(SN.T @ SN - np.eye(N.shape[1]), 2))
    v = np.asarray(v, dtype=np.float64)
    vv = float(v @ v)
    if vv == 0.0:
        return eta, 0.0
    diff = SN.T @ apply_sketch(op, v) - N.T @ v
    return eta, float(diff @ diff) / vv
