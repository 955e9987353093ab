"""Sketch-size sweep of coefficient and direction errors against the exact
SMW solve, with the measured embedding constants and the resulting bound
``||b - b_hat|| <= (sqrt(eps) + eta) / (1 - eta) * ||g|| / sqrt(lam)``.
"""

import csv
from dataclasses import asdict, dataclass

import numpy as np

from ..direction import sketched_coeffs, smw_exact
from ..net import GradientFactors, materialize_gradient
from ..sketch import SketchSpec, apply_sketch, build_sketch, column_basis, sketch_diagnostics


@dataclass
class SweepRow:
    q: int
    seed: int
    d_err: float
    b_err: float
    eta: float
    eps: float
    bound: float
    bound_ok: bool


SUMMARY_COLUMNS = ["q", "median_d_err", "median_b_err", "median_eta", "median_eps",
                   "median_bound", "rows_with_eta_lt_1", "bound_violations"]


def random_layer(n_G, n_A, kappa, batch, rng):
    G = rng.standard_normal((batch, n_G, kappa))
    A = rng.standard_normal((batch, n_A, kappa))
    return GradientFactors(G, A)


def coeff_error_bound(eta, eps, g_norm, lam):
    if eta >= 1:
        return np.inf
    return (np.sqrt(eps) + eta) / (1 - eta) * g_norm / np.sqrt(lam)


def sweep_cell(U, g, lam, q, seed, kind="uniform", replacement=False):
    """Errors for one sketch draw; eps is measured on the part of ``g``
    outside range(U), which is the vector the bound's proof sketches."""
    exact = smw_exact(U, g, lam)
    n = U.shape[0]
    spec = SketchSpec(kind, q, replacement, seed=seed)
    probs = None
    if kind == "leverage":
        probs = np.einsum("ij,ij->i", U, U)
        probs = probs / probs.sum()
    op = build_sketch(spec, probs, n=n)
    b_hat = sketched_coeffs(apply_sketch(op, U), apply_sketch(op, g), lam)
    d_hat = (U @ b_hat - g) / lam
    N = column_basis(U)
    g_perp = g - N @ (N.T @ g)
    eta, eps = sketch_diagnostics(op, U, g_perp)
    g_norm = float(np.linalg.norm(g))
    d_norm = float(np.linalg.norm(exact.d))
    b_err = float(np.linalg.norm(exact.coeffs - b_hat))
    d_err = float(np.linalg.norm(exact.d - d_hat)) / d_norm if d_norm > 0 else 0.0
    bound = coeff_error_bound(eta, eps, g_norm, lam)
    ok = bool(eta >= 1 or b_err <= bound * (1 + 1e-12) + 1e-15)
    return SweepRow(q, seed, d_err, b_err, eta, eps, float(bound), ok)


def oracle_error_sweep(shape=(16, 32, 4), batch=16, lam=1.0, q_grid=(64, 128, 256, 512),
                       seeds=range(50), kind="uniform", replacement=False):
    """Rows for every (q, seed) plus per-q medians.

    Each seed draws a random layer (``shape = (n_G, n_A, kappa)``), builds
    ``U`` from ``batch`` per-sample gradients and takes ``g`` as the mean
    gradient of an independent batch of the same size.
    """
    n_G, n_A, kappa = shape
    n = n_G * n_A
    if n > 10_000:
        raise ValueError("sweep layers must have n <= 10^4 for the exact oracle")
    rows = []
    for seed in seeds:
        rng = np.random.default_rng([seed, 404])
        U = materialize_gradient(random_layer(n_G, n_A, kappa, batch, rng)).T / np.sqrt(batch)
        g = materialize_gradient(random_layer(n_G, n_A, kappa, batch, rng)).mean(axis=0)
        for q in q_grid:
            rows.append(sweep_cell(U, g, lam, q, seed, kind, replacement))
    return rows, summarize(rows)


def summarize(rows):
    out = []
    for q in sorted({r.q for r in rows}):
        cell = [r for r in rows if r.q == q]
        med = lambda key: float(np.median([getattr(r, key) for r in cell]))  # noqa: E731
        finite_bounds = [r.bound for r in cell if np.isfinite(r.bound)]
        out.append({
            "q": q,
            "median_d_err": med("d_err"),
            "median_b_err": med("b_err"),
            "median_eta": med("eta"),
            "median_eps": med("eps"),
            "median_bound": float(np.median(finite_bounds)) if finite_bounds else float("inf"),
            "rows_with_eta_lt_1": sum(r.eta < 1 for r in cell),
            "bound_violations": sum(not r.bound_ok for r in cell),
        })
    return out


def zero_gradient_check(U, lam, q, seed=0):
    return sweep_cell(U, np.zeros(U.shape[0]), lam, q, seed)


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(SweepRow.__dataclass_fields__))
        for r in rows:
            writer.writerow(list(asdict(r).values()))


def write_summary(path, summary):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(summary)
