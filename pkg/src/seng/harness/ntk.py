"""Two-layer ReLU network in the NTK regime trained with sketched SMW steps.

``f(x) = a^T relu(W x) / sqrt(m)`` with fixed output signs ``a`` and trained
hidden weights ``W``; the loss is ``0.5 * ||f - y||^2`` summed over samples.
"""

from dataclasses import dataclass

import numpy as np

from ..direction import sketched_coeffs
from ..sketch import SketchOperator, SketchSpec, apply_sketch, build_sketch, leverage_probs


class GenerationError(RuntimeError):
    pass


class ResidualBlowup(RuntimeError):
    def __init__(self, residuals):
        self.residuals = residuals
        super().__init__(f"residual grew past 10x its initial value at step {len(residuals) - 1}")


@dataclass
class NtkProblem:
    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    W: np.ndarray
    nu: float

    @property
    def width(self):
        return self.W.shape[0]

    def outputs(self, W=None):
        W = self.W if W is None else W
        return np.maximum(self.X @ W.T, 0.0) @ self.a / np.sqrt(self.width)

    def jacobian(self, W=None):
        """``(N, m * m0)`` matrix of per-sample output gradients w.r.t. ``vec(W)``."""
        W = self.W if W is None else W
        active = (self.X @ W.T) > 0
        gate = active * self.a / np.sqrt(self.width)
        return (gate[:, :, None] * self.X[:, None, :]).reshape(len(self.X), -1)

    def gram(self, W=None):
        J = self.jacobian(W)
        return J @ J.T


def setup_ntk(N, m0, width, nu=1.0, seed=0, y_scale=1.0):
    """Random unit-norm inputs, Gaussian targets (clipped to |y| <= 10), and the
    NTK initialization ``W ~ N(0, nu^2)``, ``a ~ unif{-1, +1}``."""
    if width < 1 or N < 2:
        raise ValueError("need width >= 1 and N >= 2")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        X = rng.standard_normal((N, m0))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        d = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        if d.min() > 1e-8:
            break
    else:
        raise GenerationError("could not draw pairwise distinct inputs")
    y = np.clip(y_scale * rng.standard_normal(N), -10.0, 10.0)
    W = nu * rng.standard_normal((width, m0))
    a = rng.choice([-1.0, 1.0], size=width)
    return NtkProblem(X, y, a, W, nu)


def ntk_direction(U, g, lam, op):
    """``-(g - U b) / lam`` with ``b`` from the row-sketched LS problem."""
    if op is None:
        b = sketched_coeffs(U, g, lam)
    else:
        b = sketched_coeffs(apply_sketch(op, U), apply_sketch(op, g), lam)
    return (U @ b - g) / lam


def run_ntk_experiment(problem, alpha=0.5, lam=1e-3, steps=100, sketch=None, seed=0,
                       curvature="jacobian", damping_schedule=None):
    """Train ``problem.W`` in place; returns the list ``||f^k - y||^2`` for k = 0..steps.

    ``sketch`` is a :class:`SketchSpec` (``None`` = no sketching). With
    ``curvature="jacobian"`` the curvature columns are the raw Jacobian rows;
    ``"efim"`` uses the per-sample loss gradients scaled by 1/sqrt(N).
    """
    W = problem.W
    N = len(problem.y)
    r = problem.outputs(W) - problem.y
    residuals = [float(r @ r)]
    for k in range(steps):
        lam_k = damping_schedule(k) if damping_schedule is not None else lam
        J = problem.jacobian(W)
        g = J.T @ r
        if curvature == "jacobian":
            U = J.T
        elif curvature == "efim":
            U = (J * r[:, None]).T / np.sqrt(N)
        else:
            raise ValueError(f"unknown curvature source {curvature!r}")
        op = None
        if sketch is not None:
            spec = SketchSpec(sketch.kind, sketch.q, sketch.replacement, scaling=sketch.scaling)
            probs = leverage_probs(U) if sketch.kind == "leverage" else None
            rng = np.random.default_rng([seed, k])
            op = build_sketch(spec, probs, n=U.shape[0], rng=rng)
            if op.is_identity():
                op = None
        d = ntk_direction(U, g, lam_k, op)
        W = W + alpha * d.reshape(W.shape)
        r = problem.outputs(W) - problem.y
        residuals.append(float(r @ r))
        if residuals[-1] > 10 * residuals[0] or not np.isfinite(residuals[-1]):
            problem.W = W
            raise ResidualBlowup(residuals)
    problem.W = W
    return residuals


def residual_ratios(residuals):
    res = np.asarray(residuals)
    with np.errstate(divide="ignore", invalid="ignore"):
        return res[1:] / res[:-1]


__all__ = ["NtkProblem", "SketchOperator", "residual_ratios", "run_ntk_experiment", "setup_ntk"]
