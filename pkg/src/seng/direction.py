"""Per-layer damped natural-gradient directions via the SMW identity.

All paths return ``d = -(g - U b) / lam`` where ``b`` solves (possibly a
sketched version of) ``(lam I + U^T U) b = U^T g``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curvature import default_sketch_size, u_times_c, ut_z, utu
from .linalg import spd_solve
from .sketch import SketchOperator, SketchSpec, apply_sketch, build_sketch, sketch_diagnostics


@dataclass
class DirectionResult:
    d: np.ndarray
    coeffs: np.ndarray
    damping: float
    path: str
    eta: Optional[float] = None
    eps: Optional[float] = None


@dataclass(frozen=True)
class SketchConfig:
    """Sketch sizes for the direction solve.

    ``q`` sizes the row sketch of explicit blocks; ``zeta_A``/``zeta_G`` size
    the factor sketches of implicit blocks. ``None`` means no sketching for
    ``q`` and the default ``min(dim, max(32, dim // 4))`` for the zetas; use
    ``full()`` to switch every sketch off.
    """

    kind: str = "uniform"
    q: Optional[int] = None
    zeta_A: Optional[int] = None
    zeta_G: Optional[int] = None
    replacement: bool = True
    scaling: str = "embedding"
    sketch_factors: bool = True

    @classmethod
    def full(cls):
        return cls(q=None, sketch_factors=False)


def _check_damping(lam):
    if not lam > 0:
        raise ValueError(f"damping must be positive, got {lam}")


def smw_exact(U, g, lam):
    """Exact ``-(U U^T + lam I)^{-1} g`` through a p x p solve."""
    _check_damping(lam)
    U = np.asarray(U, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    p = U.shape[1]
    if p == 0:
        return DirectionResult(-g / lam, np.zeros(0), lam, "exact")
    b = spd_solve(lam * np.eye(p) + U.T @ U, U.T @ g)
    return DirectionResult((U @ b - g) / lam, b, lam, "exact")


def sketched_coeffs(Xi, xi, lam):
    """Minimizer of ``||Xi b - xi||^2 + lam ||b||^2``."""
    _check_damping(lam)
    p = Xi.shape[1]
    return spd_solve(lam * np.eye(p) + Xi.T @ Xi, Xi.T @ xi)


def explicit_operator(block, sketch, rng):
    """Row sketch for an explicit block, or ``None`` when unsketched."""
    if sketch.q is None:
        return None
    q = sketch.q
    n = block.n
    if q >= n and not sketch.replacement and sketch.kind == "uniform":
        return SketchOperator.identity(n)
    spec = SketchSpec(sketch.kind, q, sketch.replacement, scaling=sketch.scaling)
    probs = block.probs if sketch.kind == "leverage" else None
    return build_sketch(spec, probs, n=n, rng=rng)


def factor_operators(block, sketch, rng):
    """``(Omega_A, Omega_G)`` for an implicit block, or ``None``."""
    if not sketch.sketch_factors:
        return None
    za = sketch.zeta_A if sketch.zeta_A is not None else default_sketch_size(block.n_A)
    zg = sketch.zeta_G if sketch.zeta_G is not None else default_sketch_size(block.n_G)
    ops = []
    for dim, zeta, probs in ((block.n_A, za, block.probs_A), (block.n_G, zg, block.probs_G)):
        if zeta >= dim and not sketch.replacement:
            ops.append(None)
            continue
        spec = SketchSpec(sketch.kind, zeta, sketch.replacement, scaling=sketch.scaling)
        ops.append(build_sketch(spec, probs if sketch.kind == "leverage" else None, n=dim,
                                rng=rng))
    if ops[0] is None and ops[1] is None:
        return None
    return ops[0], ops[1]


def layer_direction(block, g, lam, sketch=None, rng=None, uc_mode="averaged",
                    diagnose=False, g_coef=None):
    """Direction for one layer from its curvature block.

    ``g_coef`` is the vector used in the coefficient solve (defaults to
    ``g``); the distributed stale variant passes the previous gradient.
    """
    _check_damping(lam)
    sketch = sketch if sketch is not None else SketchConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    g = np.asarray(g, dtype=np.float64)
    g_coef = g if g_coef is None else np.asarray(g_coef, dtype=np.float64)
    p = block.n_samples
    if p == 0:
        return DirectionResult(-g / lam, np.zeros(0), lam, "gradient")
    if block.mode == "explicit":
        op = explicit_operator(block, sketch, rng)
        if op is None:
            Xi, xi = block.U, g_coef
        else:
            Xi, xi = apply_sketch(op, block.U), apply_sketch(op, g_coef)
        b = sketched_coeffs(Xi, xi, lam)
        result = DirectionResult((block.U @ b - g) / lam, b, lam, "explicit_sketched")
        if diagnose and op is not None and np.any(block.U):
            result.eta, result.eps = sketch_diagnostics(op, block.U, g_coef)
        return result
    ops = factor_operators(block, sketch, rng)
    B = utu(block, ops)
    a = ut_z(block, g_coef, ops)
    b = spd_solve(lam * np.eye(p) + B, a)
    return DirectionResult((u_times_c(block, b, uc_mode) - g) / lam, b, lam, "implicit")
