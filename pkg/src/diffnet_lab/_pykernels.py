"""Pure-numpy reference implementations of the hot kernels.

Every public function here has a twin in ``_ckernels.pyx`` with the same
signature and semantics. Arrays are C-contiguous float32 or float64 and use
channels-last layout: images (B, H, W), filter planes (B, H, W, 5), feature
maps (B, H, W, C).

Stencil plane order is (north, west, south, east, center). Off-grid reads
replicate the nearest boundary pixel (zero-Neumann).
"""

import numpy as np

# (row offset, column offset) of each directional plane
OFFSETS = ((-1, 0), (0, -1), (1, 0), (0, 1))


def shift(u, direction):
    """Neighbour lookup ``out[i, j] = u[clamp(i + di), clamp(j + dj)]`` on the last two axes."""
    di, dj = OFFSETS[direction]
    out = np.empty_like(u)
    if di == -1:
        out[..., 1:, :] = u[..., :-1, :]
        out[..., 0, :] = u[..., 0, :]
    elif di == 1:
        out[..., :-1, :] = u[..., 1:, :]
        out[..., -1, :] = u[..., -1, :]
    elif dj == -1:
        out[..., :, 1:] = u[..., :, :-1]
        out[..., :, 0] = u[..., :, 0]
    else:
        out[..., :, :-1] = u[..., :, 1:]
        out[..., :, -1] = u[..., :, -1]
    return out


def shift_adjoint(v, direction):
    """Transpose of :func:`shift`; boundary reads accumulate onto the edge pixel."""
    di, dj = OFFSETS[direction]
    out = np.zeros_like(v)
    if di == -1:
        out[..., :-1, :] += v[..., 1:, :]
        out[..., 0, :] += v[..., 0, :]
    elif di == 1:
        out[..., 1:, :] += v[..., :-1, :]
        out[..., -1, :] += v[..., -1, :]
    elif dj == -1:
        out[..., :, :-1] += v[..., :, 1:]
        out[..., :, 0] += v[..., :, 0]
    else:
        out[..., :, 1:] += v[..., :, :-1]
        out[..., :, -1] += v[..., :, -1]
    return out


def stencil_forward(u, planes):
    """``sum_d planes[..., d] * shift_d(u) + planes[..., 4] * u`` for u (B, H, W)."""
    out = planes[..., 4] * u
    for d in range(4):
        out += planes[..., d] * shift(u, d)
    return out


def stencil_backward(u, planes, grad):
    """Gradients of :func:`stencil_forward` w.r.t. ``u`` and ``planes``."""
    dplanes = np.empty_like(planes)
    du = planes[..., 4] * grad
    dplanes[..., 4] = grad * u
    for d in range(4):
        dplanes[..., d] = grad * shift(u, d)
        du += shift_adjoint(planes[..., d] * grad, d)
    return du, dplanes


def im2col3x3(x):
    """Zero-padded 3x3 patches of x (B, H, W, C) as rows of a (B*H*W, 9*C) matrix.

    Column index is ``(ki * 3 + kj) * C + c``.
    """
    b, h, w, c = x.shape
    xp = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((b, h, w, 3, 3, c), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, :, :, ki, kj] = xp[:, ki:ki + h, kj:kj + w]
    return cols.reshape(b * h * w, 9 * c)


def col2im3x3(dcols, shape):
    """Adjoint of :func:`im2col3x3`: scatter-add patch gradients back to (B, H, W, C)."""
    b, h, w, c = shape
    d6 = dcols.reshape(b, h, w, 3, 3, c)
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dcols.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki:ki + h, kj:kj + w] += d6[:, :, :, ki, kj]
    return np.ascontiguousarray(dxp[:, 1:-1, 1:-1])
