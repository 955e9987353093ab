"""Per-layer curvature state and the products U^T z, U^T U and U c.

A block stores the scaled per-sample gradients ``U = [u_1 .. u_p] / sqrt(p)``
either explicitly as an (n, p) matrix or implicitly as rank-r factor banks
``G`` (p, n_G, r) and ``A`` (p, n_A, r) with ``u_i ~ vec(G[i] @ A[i].T)``.
The implicit products never build anything of size n * p.
"""

import tracemalloc
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .linalg import mat, vec
from .net import GradientFactors, materialize_gradient
from .sketch import DegenerateInputError, SketchOperator, apply_sketch, leverage_probs

DEFAULT_THRESHOLD = 200_000
DEFAULT_MAX_RANK = 16
AVERAGED_GUARD = 1e-30


@dataclass
class CurvatureBlock:
    n_G: int
    n_A: int
    mode: str = "empty"
    U: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    scale: float = 1.0
    last_refresh_step: int = -1
    probs: Optional[np.ndarray] = None
    probs_G: Optional[np.ndarray] = None
    probs_A: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    @property
    def n(self):
        return self.n_G * self.n_A

    @property
    def n_samples(self):
        if self.mode == "explicit":
            return self.U.shape[1]
        if self.mode == "implicit":
            return self.G.shape[0]
        return 0

    @property
    def rank(self):
        return self.G.shape[2] if self.mode == "implicit" else None

    def subset(self, idx):
        """Block built from the samples ``idx`` only, rescaled by 1/sqrt(len(idx))."""
        idx = np.asarray(idx)
        k = len(idx)
        if self.mode == "explicit":
            # undo the global 1/sqrt(p) column scaling first
            U = self.U[:, idx] * (np.sqrt(self.n_samples) / np.sqrt(k))
            return replace(self, U=U, probs=_safe_leverage(U), notes=[])
        if self.mode == "implicit":
            return replace(self, G=self.G[idx], A=self.A[idx], scale=1.0 / np.sqrt(k), notes=[])
        return replace(self, notes=[])


def _safe_leverage(M):
    try:
        return leverage_probs(M)
    except DegenerateInputError:
        return None


def choose_mode(n_G, n_A, kappa, threshold=DEFAULT_THRESHOLD, routing="threshold"):
    """``"explicit"`` or ``"implicit"`` storage for a layer of the given shape."""
    n = n_G * n_A
    if routing == "threshold":
        return "explicit" if n < threshold else "implicit"
    if routing == "storage":
        return "implicit" if n > (n_G + n_A) * kappa else "explicit"
    raise ValueError(f"unknown routing rule {routing!r}")


def compress_factors(factors: GradientFactors, rank, method="factor"):
    """Rank-``rank`` factor banks approximating each sample's ``G_hat @ A_hat.T``.

    ``method="factor"`` truncates the SVD of the taller of the two factors and
    splits sqrt(S) between both sides; ``method="product"`` truncates the SVD
    of the product itself through thin QRs of the factors.
    """
    Gh, Ah = factors.G_hat, factors.A_hat
    kappa = factors.kappa
    if rank >= kappa and method == "factor":
        return Gh.copy(), Ah.copy()
    if method == "factor":
        if factors.n_G >= factors.n_A:
            P, S, Vt = np.linalg.svd(Gh, full_matrices=False)
            root = np.sqrt(S[:, :rank])
            G = P[:, :, :rank] * root[:, None, :]
            A = np.matmul(Ah, np.swapaxes(Vt[:, :rank], 1, 2)) * root[:, None, :]
        else:
            P, S, Vt = np.linalg.svd(Ah, full_matrices=False)
            root = np.sqrt(S[:, :rank])
            A = P[:, :, :rank] * root[:, None, :]
            G = np.matmul(Gh, np.swapaxes(Vt[:, :rank], 1, 2)) * root[:, None, :]
        return G, A
    if method == "product":
        Qg, Rg = np.linalg.qr(Gh)
        Qa, Ra = np.linalg.qr(Ah)
        core = np.matmul(Rg, np.swapaxes(Ra, 1, 2))
        P, S, Vt = np.linalg.svd(core)
        r = min(rank, S.shape[1])
        root = np.sqrt(S[:, :r])
        G = np.matmul(Qg, P[:, :, :r]) * root[:, None, :]
        A = np.matmul(Qa, np.swapaxes(Vt[:, :r], 1, 2)) * root[:, None, :]
        return G, A
    raise ValueError(f"unknown compression method {method!r}")


def route_and_refresh(block, factors, step, T=1, threshold=DEFAULT_THRESHOLD, rank=None,
                      routing="threshold", method="factor"):
    """Refresh ``block`` from ``factors`` when ``step % T == 0``.

    Off-cycle steps return the block object unchanged. An empty block is
    always filled.
    """
    if T < 1:
        raise ValueError("refresh period T must be >= 1")
    if block.mode != "empty" and step % T != 0:
        return block
    if (factors.n_G, factors.n_A) != (block.n_G, block.n_A):
        raise ValueError(
            f"factors are {factors.n_G}x{factors.n_A}, block is {block.n_G}x{block.n_A}")
    p = len(factors)
    scale = 1.0 / np.sqrt(p)
    mode = choose_mode(block.n_G, block.n_A, factors.kappa, threshold, routing)
    notes = []
    if mode == "explicit":
        U = materialize_gradient(factors).T * scale
        return CurvatureBlock(block.n_G, block.n_A, "explicit", U=np.ascontiguousarray(U),
                              scale=scale, last_refresh_step=step, probs=_safe_leverage(U))
    kappa = factors.kappa
    r = min(kappa, DEFAULT_MAX_RANK) if rank is None else rank
    if r > kappa:
        msg = f"rank {r} exceeds kappa {kappa}; clamped"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        r = kappa
    if r < 1:
        raise ValueError("rank must be >= 1")
    G, A = compress_factors(factors, r, method)
    # row-norm probabilities of the stacked banks
    pg = _safe_leverage(G.transpose(1, 0, 2).reshape(block.n_G, -1))
    pa = _safe_leverage(A.transpose(1, 0, 2).reshape(block.n_A, -1))
    return CurvatureBlock(block.n_G, block.n_A, "implicit", G=G, A=A, scale=scale,
                          last_refresh_step=step, probs_G=pg, probs_A=pa, notes=notes)


def _active(sketches):
    """Drop identity operators so they leave the data (and its layout) untouched."""
    if sketches is None:
        return None, None
    return tuple(None if op is None or op.is_identity() else op for op in sketches)


def _sketch_banks(block, sketches):
    G, A = block.G, block.A
    omega_A, omega_G = _active(sketches)
    if omega_G is not None:
        G = apply_sketch(omega_G, np.swapaxes(G, 0, 1)).swapaxes(0, 1)
    if omega_A is not None:
        A = apply_sketch(omega_A, np.swapaxes(A, 0, 1)).swapaxes(0, 1)
    return G, A


def _sketch_mat(Z, sketches):
    omega_A, omega_G = _active(sketches)
    if omega_G is not None:
        Z = apply_sketch(omega_G, Z)
    if omega_A is not None:
        Z = apply_sketch(omega_A, Z.T).T
    return Z


def ut_z(block, z, sketches=None):
    """``U^T z``; implicit blocks may pass ``sketches=(Omega_A, Omega_G)``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (block.n,):
        raise ValueError(f"z has shape {z.shape}, block expects ({block.n},)")
    if block.mode == "explicit":
        if sketches is not None:
            raise ValueError("explicit blocks take no factor sketches")
        return block.U.T @ z
    if block.mode == "implicit":
        G, A = _sketch_banks(block, sketches)
        Z = _sketch_mat(mat(z, block.n_G, block.n_A), sketches)
        return block.scale * kernels.factor_dot(G, A, Z)
    return np.zeros(0)


def utu(block, sketches=None):
    """Symmetrized ``U^T U`` (exact, factored, or sketched-factored)."""
    if block.mode == "explicit":
        if sketches is not None:
            raise ValueError("explicit blocks take no factor sketches")
        B = block.U.T @ block.U
    elif block.mode == "implicit":
        G, A = _sketch_banks(block, sketches)
        B = block.scale ** 2 * kernels.factor_gram(G, A, G, A)
    else:
        return np.zeros((0, 0))
    return 0.5 * (B + B.T)


def u_times_c(block, c, mode="exact"):
    """``U c``. ``mode="averaged"`` uses one product of weighted factor sums."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (block.n_samples,):
        raise ValueError(f"c has shape {c.shape}, block has {block.n_samples} samples")
    if block.mode == "explicit":
        return block.U @ c
    if block.mode != "implicit":
        return np.zeros(block.n)
    if mode == "exact":
        p, _, r = block.G.shape
        Gc = (block.G * c[:, None, None]).transpose(1, 0, 2).reshape(block.n_G, p * r)
        Ac = block.A.transpose(1, 0, 2).reshape(block.n_A, p * r)
        return block.scale * vec(Gc @ Ac.T)
    if mode == "averaged":
        return block.scale * averaged_product(block.G, block.A, c)
    raise ValueError(f"unknown Uc mode {mode!r}")


def averaged_factors(G, A, c):
    """``(sum_i sqrt|c_i| G_i, sum_i c_i / D * A_i)`` with ``D = sum_i sqrt|c_i|``.

    Both sums are zero when ``D`` underflows.
    """
    root = np.sqrt(np.abs(c))
    denom = root.sum()
    if denom < AVERAGED_GUARD:
        return np.zeros(G.shape[1:]), np.zeros(A.shape[1:])
    Gbar = np.tensordot(root, G, axes=1)
    Abar = np.tensordot(c / denom, A, axes=1)
    return Gbar, Abar


def averaged_product(G, A, c):
    Gbar, Abar = averaged_factors(G, A, c)
    return vec(Gbar @ Abar.T)


def default_sketch_size(dim):
    return min(dim, max(32, dim // 4))


def measure_peak_bytes(fn, *args, **kwargs):
    """Run ``fn`` under tracemalloc; returns ``(result, peak_bytes)``.

    numpy reports its data buffers to tracemalloc, so the peak covers every
    array allocated during the call.
    """
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base, _ = tracemalloc.get_traced_memory()
    try:
        result = fn(*args, **kwargs)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        if not was_tracing:
            tracemalloc.stop()
    return result, peak - base


__all__ = [
    "CurvatureBlock",
    "SketchOperator",
    "averaged_factors",
    "choose_mode",
    "compress_factors",
    "default_sketch_size",
    "measure_peak_bytes",
    "route_and_refresh",
    "u_times_c",
    "ut_z",
    "utu",
]
