"""Independent reference implementations used as test oracles.

These avoid LAPACK entirely so they cannot share a failure mode with the
code under test.
"""

import numpy as np


def gauss_jordan_inverse(M):
    """Inverse by Gauss-Jordan elimination with partial pivoting, in plain Python loops."""
    n = len(M)
    a = [list(map(float, row)) + [1.0 if i == j else 0.0 for j in range(n)]
         for i, row in enumerate(M)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        a[col], a[piv] = a[piv], a[col]
        pv = a[col][col]
        a[col] = [v / pv for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0.0:
                f = a[r][col]
                a[r] = [vr - f * vc for vr, vc in zip(a[r], a[col])]
    return np.array([row[n:] for row in a])


def dense_direction(U, g, lam):
    """``-(U U^T + lam I)^{-1} g`` through the full n x n inverse."""
    n = U.shape[0]
    M = U @ U.T + lam * np.eye(n)
    return -gauss_jordan_inverse(M) @ g


def jacobi_svd(A, sweeps=60, tol=1e-15):
    """One-sided Jacobi SVD: returns ``(U, S, Vt)`` with S descending."""
    X = np.array(A, dtype=np.float64, copy=True)
    m, n = X.shape
    V = np.eye(n)
    for _ in range(sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = X[:, i] @ X[:, i]
                beta = X[:, j] @ X[:, j]
                gamma = X[:, i] @ X[:, j]
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                off = max(off, abs(gamma) / np.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1 + zeta * zeta)) if zeta != 0 else 1.0
                c = 1 / np.sqrt(1 + t * t)
                s = c * t
                xi, xj = X[:, i].copy(), X[:, j].copy()
                X[:, i], X[:, j] = c * xi - s * xj, s * xi + c * xj
                vi, vj = V[:, i].copy(), V[:, j].copy()
                V[:, i], V[:, j] = c * vi - s * vj, s * vi + c * vj
        if off < tol:
            break
    S = np.linalg.norm(X, axis=0)
    order = np.argsort(-S)
    S = S[order]
    Uo = X[:, order] / np.where(S > 0, S, 1.0)
    return Uo, S, V[:, order].T


def finite_difference_grad(fn, W, h=1e-6):
    """Central differences of the scalar ``fn(W)`` with respect to each entry of ``W``."""
    grad = np.zeros_like(W)
    it = np.nditer(W, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = W[idx]
        W[idx] = old + h
        fp = fn(W)
        W[idx] = old - h
        fm = fn(W)
        W[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def loop_conv2d(x, W, kernel, stride, padding):
    """Direct nested-loop convolution; ``W`` is (out, C*k*k) in channel-major order."""
    B, C, H, Wd = x.shape
    out_c = W.shape[0]
    Wk = W.reshape(out_c, C, kernel, kernel)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (H + 2 * padding - kernel) // stride + 1
    wo = (Wd + 2 * padding - kernel) // stride + 1
    y = np.zeros((B, out_c, ho, wo))
    for b in range(B):
        for o in range(out_c):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + kernel, j * stride:j * stride + kernel]
                    y[b, o, i, j] = np.sum(patch * Wk[o])
    return y
