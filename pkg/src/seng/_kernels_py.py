"""Pure numpy versions of the hot kernels.

These define the reference behaviour; the compiled module in ``_kernels.pyx``
must agree with them to rounding error.
"""

import numpy as np


def im2col(x, kh, kw, stride, padding):
    """Unfold ``x`` of shape (B, C, H, W) into patches (B, C*kh*kw, Ho*Wo).

    Patch rows are ordered channel-major, then kernel row, then kernel
    column, matching ``weight.reshape(out_channels, -1)``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    b, c, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b, c, kh, kw, ho, wo))
    for i in range(kh):
        i_end = i + stride * ho
        for j in range(kw):
            j_end = j + stride * wo
            cols[:, :, i, j] = x[:, :, i:i_end:stride, j:j_end:stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def col2im(cols, x_shape, kh, kw, stride, padding):
    """Adjoint of :func:`im2col`: scatter-add patches back to image shape."""
    b, c, h, w = x_shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols = np.asarray(cols, dtype=np.float64).reshape(b, c, kh, kw, ho, wo)
    out = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        i_end = i + stride * ho
        for j in range(kw):
            j_end = j + stride * wo
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def factor_gram(G1, A1, G2, A2):
    """Pairwise inner products of factored gradients.

    Entry (i, j) is ``elesum((A1[i].T @ A2[j]) * (G1[i].T @ G2[j]))``, which
    equals ``vec(G1[i] A1[i].T) . vec(G2[j] A2[j].T)``.
    """
    gg = np.einsum("igr,jgs->ijrs", G1, G2, optimize=True)
    aa = np.einsum("iar,jas->ijrs", A1, A2, optimize=True)
    return np.einsum("ijrs,ijrs->ij", gg, aa)


def factor_dot(G, A, Z):
    """Entry i is ``sum_r G[i][:, r] . Z @ A[i][:, r]`` for Z of shape (nG, nA)."""
    t = np.matmul(Z, A)
    return np.einsum("igr,igr->i", t, G)
