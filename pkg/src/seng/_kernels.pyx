# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(x, int kh, int kw, int stride, int padding):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t b = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t ho = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((b, c * kh * kw, ho * wo))
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t n, ch, i, j, oy, ox, row, iy, ix
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(ho):
                            iy = oy * stride + i - padding
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox * stride + j - padding
                                if ix < 0 or ix >= w:
                                    continue
                                ov[n, row, oy * wo + ox] = xv[n, ch, iy, ix]
    return out


def col2im(cols, x_shape, int kh, int kw, int stride, int padding):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * padding - kw) // stride + 1
    cdef double[:, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(
        b, c * kh * kw, ho * wo)
    out = np.zeros((b, c, h, w))
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t n, ch, i, j, oy, ox, row, iy, ix
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(ho):
                            iy = oy * stride + i - padding
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox * stride + j - padding
                                if ix < 0 or ix >= w:
                                    continue
                                ov[n, ch, iy, ix] += cv[n, row, oy * wo + ox]
    return out


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        s += a[k] * b[k]
    return s


def _bank(X):
    # (p, n, r) -> (n, p * r): one GEMM then covers every sample pair
    p, n, r = X.shape
    return np.ascontiguousarray(np.transpose(X, (1, 0, 2))).reshape(n, p * r)


def factor_gram(G1, A1, G2, A2):
    symmetric = G1 is G2 and A1 is A2
    G1 = np.asarray(G1, dtype=np.float64)
    A1 = np.asarray(A1, dtype=np.float64)
    G2 = np.asarray(G2, dtype=np.float64)
    A2 = np.asarray(A2, dtype=np.float64)
    cdef Py_ssize_t p = G1.shape[0], q = G2.shape[0], r1 = G1.shape[2], r2 = G2.shape[2]
    bg1, ba1 = _bank(G1), _bank(A1)
    bg2, ba2 = (bg1, ba1) if symmetric else (_bank(G2), _bank(A2))
    cdef double[:, ::1] gg = np.ascontiguousarray(bg1.T @ bg2)
    cdef double[:, ::1] aa = np.ascontiguousarray(ba1.T @ ba2)
    out = np.zeros((p, q))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, r, s, j0, row
    cdef double acc
    cdef bint sym = symmetric
    with nogil:
        for i in range(p):
            j0 = i if sym else 0
            for j in range(j0, q):
                acc = 0.0
                for r in range(r1):
                    row = i * r1 + r
                    for s in range(j * r2, j * r2 + r2):
                        acc += gg[row, s] * aa[row, s]
                ov[i, j] = acc
                if sym:
                    ov[j, i] = acc
    return out


def factor_dot(G, A, Z):
    cdef double[:, :, ::1] t = np.ascontiguousarray(
        np.matmul(np.asarray(Z, dtype=np.float64), np.asarray(A, dtype=np.float64)))
    cdef double[:, :, ::1] gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t p = gv.shape[0], n = gv.shape[1] * gv.shape[2]
    out = np.zeros(p)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(p):
            ov[i] = _dot(&gv[i, 0, 0], &t[i, 0, 0], n)
    return out
