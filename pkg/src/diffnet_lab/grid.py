"""Images, 5-point non-stationary stencils and their dense-matrix oracle.

An image is a 2-D float64 array (rows, columns). A :class:`FilterField`
holds one stencil coefficient per pixel for each of the five stencil
positions, ordered (north, west, south, east, center). North is the row
above (``i - 1``), west the column to the left (``j - 1``).

Boundary pixels follow zero-Neumann conditions: a neighbour read that falls
off the grid returns the boundary pixel itself.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels

PLANE_NAMES = ("north", "west", "south", "east", "center")
MAX_ORACLE_PIXELS = 64 * 64


class StencilMode(Enum):
    ZERO_MEAN = "zero-mean"  # center forced to minus the directional sum
    FREE_CENTER = "free-center"


def as_image(u, *, copy=False):
    """Validate and convert to a 2-D float64 image."""
    arr = np.array(u, dtype=np.float64) if copy else np.asarray(u, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"image must be a nonempty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


@dataclass(frozen=True)
class FilterField:
    """Five per-pixel stencil planes stacked as an array of shape (5, H, W)."""

    planes: np.ndarray

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != 5:
            raise ValueError(f"filter field needs shape (5, H, W), got {planes.shape}")
        object.__setattr__(self, "planes", planes)

    @classmethod
    def from_planes(cls, north, west, south, east, center=None):
        """Build from individual planes; ``center=None`` gives the zero-mean center."""
        directional = np.stack([north, west, south, east]).astype(np.float64)
        if center is None:
            center = -directional.sum(axis=0)
        return cls(np.concatenate([directional, np.asarray(center, np.float64)[None]]))

    @classmethod
    def constant(cls, shape, directional=1.0, center=None):
        d = np.full(shape, float(directional))
        c = None if center is None else np.full(shape, float(center))
        return cls.from_planes(d, d, d, d, c)

    @property
    def shape(self):
        return self.planes.shape[1:]

    @property
    def directional(self):
        return self.planes[:4]

    @property
    def center(self):
        return self.planes[4]

    def __getattr__(self, name):
        if name in PLANE_NAMES:
            return self.planes[PLANE_NAMES.index(name)]
        raise AttributeError(name)

    def zero_mean(self):
        """Same directional planes with the center replaced by minus their sum."""
        return FilterField.from_planes(*self.directional)

    def is_zero_mean(self, atol=0.0):
        return bool(np.all(np.abs(self.center + self.directional.sum(axis=0)) <= atol))


def _check_shapes(u, f):
    if u.shape != f.shape:
        raise ValueError(f"image shape {u.shape} does not match filter shape {f.shape}")


def apply_stencil(u, f, mode, dt=1.0):
    """``dt * (sum_d plane_d * shift_d(u) + center * u)``.

    In :attr:`StencilMode.ZERO_MEAN` the center plane is ignored and the
    update is evaluated in flux form ``sum_d plane_d * (shift_d(u) - u)``,
    which annihilates constant images exactly.
    """
    u = as_image(u)
    _check_shapes(u, f)
    dt = float(dt)
    if not np.isfinite(dt):
        raise ValueError("dt must be finite")
    if mode is StencilMode.ZERO_MEAN:
        out = np.zeros_like(u)
        for d in range(4):
            out += f.planes[d] * (kernels.shift(u, d) - u)
    elif mode is StencilMode.FREE_CENTER:
        out = kernels.stencil_forward(u[None], np.moveaxis(f.planes, 0, -1)[None])[0]
    else:
        raise TypeError(f"unknown stencil mode {mode!r}")
    return dt * out


def dense_oracle_matrix(f, mode, dt=1.0):
    """Explicit (H*W, H*W) sparse-sub-diagonal matrix of :func:`apply_stencil`.

    Built pixel by pixel, with off-grid neighbours folded onto the diagonal.
    Only for testing on small grids.
    """
    h, w = f.shape
    n = h * w
    if n > MAX_ORACLE_PIXELS:
        raise ValueError(f"refusing to materialise a {n}x{n} matrix (limit {MAX_ORACLE_PIXELS} pixels)")
    planes = f.planes
    if mode is StencilMode.ZERO_MEAN:
        center = -planes[:4].sum(axis=0)
    elif mode is StencilMode.FREE_CENTER:
        center = planes[4]
    else:
        raise TypeError(f"unknown stencil mode {mode!r}")
    mat = np.zeros((n, n))
    for i in range(h):
        for j in range(w):
            row = i * w + j
            mat[row, row] += center[i, j]
            for d, (di, dj) in enumerate(kernels.OFFSETS):
                ni = min(max(i + di, 0), h - 1)
                nj = min(max(j + dj, 0), w - 1)
                mat[row, ni * w + nj] += planes[d, i, j]
    return float(dt) * mat


def image_stats(u):
    u = as_image(u)
    return {
        "min": float(u.min()),
        "max": float(u.max()),
        "mean": float(u.mean()),
        "l2norm": float(np.sqrt(np.sum(u * u))),
    }
