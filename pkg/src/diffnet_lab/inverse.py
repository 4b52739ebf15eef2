"""Analytic inversion tools and the zero-mean/smoothing split of learned filters."""

from dataclasses import dataclass

import numpy as np

from .diffusion import gaussian_convolve
from .grid import FilterField, StencilMode, apply_stencil, as_image


def _wavenumber_sq(shape):
    ky = 2 * np.pi * np.fft.fftfreq(shape[0])
    kx = 2 * np.pi * np.fft.fftfreq(shape[1])
    return ky[:, None] ** 2 + kx[None, :] ** 2


def periodic_gaussian_convolve(u, T):
    """Whole-space Green's operator on a periodic grid: multiply the spectrum by ``exp(-|k|^2 T)``."""
    u = as_image(u)
    spec = np.fft.fft2(u) * np.exp(-_wavenumber_sq(u.shape) * T)
    return np.fft.ifft2(spec).real


def fourier_deconvolve(uT, T, reg_eps=0.0):
    """Undo periodic Gaussian smoothing by spectral division, ``u_hat * exp(|k|^2 T)``.

    With ``reg_eps > 0`` the multiplier is clamped at ``1 / reg_eps``. With
    ``reg_eps = 0`` any noise in ``uT`` is amplified without bound; this is a
    diagnostic, not a practical solver.
    """
    uT = as_image(uT)
    if reg_eps < 0:
        raise ValueError("reg_eps must be nonnegative")
    mult = np.exp(_wavenumber_sq(uT.shape) * T)
    if reg_eps > 0:
        mult = np.minimum(mult, 1.0 / reg_eps)
    return np.fft.ifft2(np.fft.fft2(uT) * mult).real


def laplacian(u):
    """5-point Laplacian with zero-Neumann boundaries."""
    u = as_image(u)
    return apply_stencil(u, FilterField.constant(u.shape, 1.0), StencilMode.ZERO_MEAN)


def inverse_iso_step(u, dt):
    """``(Id - dt * Laplacian) u``, the inverse of one implicit isotropic step."""
    u = as_image(u)
    return u - dt * laplacian(u)


def unsharp_mask(u, sigma, eps):
    """``u + eps * (u - G_sigma * u)``; to first order ``(Id - eps sigma^2 / 2 Laplacian) u``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    u = as_image(u)
    return u + eps * (u - gaussian_convolve(u, 0.5 * sigma**2))


@dataclass(frozen=True)
class FilterDecomposition:
    """Split of a free-center stencil into a zero-mean part and a pixelwise residual.

    ``smoothing`` is ``zeta1 + zeta2 + zeta3 + zeta4 - zeta5`` where ``zeta5 =
    -center``; it vanishes exactly when the stencil annihilates constants.
    """

    zero_mean_part: FilterField
    smoothing: np.ndarray
    alpha: float

    def recompose(self):
        center = self.smoothing - self.zero_mean_part.directional.sum(axis=0)
        return FilterField(np.concatenate([self.zero_mean_part.directional, center[None]]))


def decompose_filter(f):
    smoothing = f.directional.sum(axis=0) + f.center
    return FilterDecomposition(f.zero_mean(), smoothing, float(np.mean(np.abs(smoothing))))


def smoothing_level(planes, axis=-3):
    """Mean |sum of directional planes + center|; ``axis`` indexes the 5 planes."""
    p = np.moveaxis(np.asarray(planes), axis, 0)
    return float(np.mean(np.abs(p[:4].sum(axis=0) + p[4])))
