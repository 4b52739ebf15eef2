# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; semantics mirror ``_pykernels`` bit for bit.

Summation order follows the numpy reference so both backends agree exactly
when built without floating-point contraction.
"""

import numpy as np

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


def _stencil_forward(const real[:, :, ::1] u, const real[:, :, :, ::1] p, real[:, :, ::1] out):
    cdef Py_ssize_t B = u.shape[0], H = u.shape[1], W = u.shape[2]
    cdef Py_ssize_t b, i, j, im, ip, jm, jp
    cdef real acc
    with nogil:
        for b in range(B):
            for i in range(H):
                im = _clamp(i - 1, H)
                ip = _clamp(i + 1, H)
                for j in range(W):
                    jm = _clamp(j - 1, W)
                    jp = _clamp(j + 1, W)
                    acc = p[b, i, j, 4] * u[b, i, j]
                    acc = acc + p[b, i, j, 0] * u[b, im, j]
                    acc = acc + p[b, i, j, 1] * u[b, i, jm]
                    acc = acc + p[b, i, j, 2] * u[b, ip, j]
                    acc = acc + p[b, i, j, 3] * u[b, i, jp]
                    out[b, i, j] = acc


def stencil_forward(u, planes):
    u = np.ascontiguousarray(u)
    planes = np.ascontiguousarray(planes, dtype=u.dtype)
    out = np.empty_like(u)
    _stencil_forward(u, planes, out)
    return out


def _stencil_backward(const real[:, :, ::1] u, const real[:, :, :, ::1] p,
                      const real[:, :, ::1] g, real[:, :, ::1] du, real[:, :, :, ::1] dp,
                      real[:, :, ::1] acc_n, real[:, :, ::1] acc_w,
                      real[:, :, ::1] acc_s, real[:, :, ::1] acc_e):
    cdef Py_ssize_t B = u.shape[0], H = u.shape[1], W = u.shape[2]
    cdef Py_ssize_t b, i, j, im, ip, jm, jp
    cdef real gij
    with nogil:
        for b in range(B):
            for i in range(H):
                im = _clamp(i - 1, H)
                ip = _clamp(i + 1, H)
                for j in range(W):
                    jm = _clamp(j - 1, W)
                    jp = _clamp(j + 1, W)
                    gij = g[b, i, j]
                    dp[b, i, j, 0] = gij * u[b, im, j]
                    dp[b, i, j, 1] = gij * u[b, i, jm]
                    dp[b, i, j, 2] = gij * u[b, ip, j]
                    dp[b, i, j, 3] = gij * u[b, i, jp]
                    dp[b, i, j, 4] = gij * u[b, i, j]
                    # per-direction scatter; at most two terms land on a pixel, so order is irrelevant
                    acc_n[b, im, j] += p[b, i, j, 0] * gij
                    acc_w[b, i, jm] += p[b, i, j, 1] * gij
                    acc_s[b, ip, j] += p[b, i, j, 2] * gij
                    acc_e[b, i, jp] += p[b, i, j, 3] * gij
            for i in range(H):
                for j in range(W):
                    du[b, i, j] = (((p[b, i, j, 4] * g[b, i, j] + acc_n[b, i, j])
                                    + acc_w[b, i, j]) + acc_s[b, i, j]) + acc_e[b, i, j]


def stencil_backward(u, planes, grad):
    u = np.ascontiguousarray(u)
    planes = np.ascontiguousarray(planes, dtype=u.dtype)
    grad = np.ascontiguousarray(grad, dtype=u.dtype)
    du = np.empty_like(u)
    dplanes = np.empty_like(planes)
    accs = [np.zeros_like(u) for _ in range(4)]
    _stencil_backward(u, planes, grad, du, dplanes, *accs)
    return du, dplanes


def _im2col3x3(const real[:, :, :, ::1] x, real[:, ::1] cols):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t b, h, w, c, ki, kj, hh, ww, row, base
    with nogil:
        for b in range(B):
            for h in range(H):
                for w in range(W):
                    row = (b * H + h) * W + w
                    for ki in range(3):
                        hh = h + ki - 1
                        for kj in range(3):
                            ww = w + kj - 1
                            base = (ki * 3 + kj) * C
                            if hh < 0 or hh >= H or ww < 0 or ww >= W:
                                for c in range(C):
                                    cols[row, base + c] = 0
                            else:
                                for c in range(C):
                                    cols[row, base + c] = x[b, hh, ww, c]


def im2col3x3(x):
    x = np.ascontiguousarray(x)
    b, h, w, c = x.shape
    cols = np.empty((b * h * w, 9 * c), dtype=x.dtype)
    _im2col3x3(x, cols)
    return cols


def _col2im3x3(const real[:, ::1] dcols, real[:, :, :, ::1] dx):
    cdef Py_ssize_t B = dx.shape[0], H = dx.shape[1], W = dx.shape[2], C = dx.shape[3]
    cdef Py_ssize_t b, h, w, c, ki, kj, hs, ws, base, row
    with nogil:
        for b in range(B):
            for h in range(H):
                for w in range(W):
                    for c in range(C):
                        dx[b, h, w, c] = 0
                    for ki in range(3):
                        # the patch centred on row hs reads row h through tap ki
                        hs = h + 1 - ki
                        if hs < 0 or hs >= H:
                            continue
                        for kj in range(3):
                            ws = w + 1 - kj
                            if ws < 0 or ws >= W:
                                continue
                            row = (b * H + hs) * W + ws
                            base = (ki * 3 + kj) * C
                            for c in range(C):
                                dx[b, h, w, c] = dx[b, h, w, c] + dcols[row, base + c]


def col2im3x3(dcols, shape):
    dcols = np.ascontiguousarray(dcols)
    dx = np.empty(shape, dtype=dcols.dtype)
    _col2im3x3(dcols, dx)
    return dx
