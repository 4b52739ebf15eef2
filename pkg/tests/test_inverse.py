import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffnet_lab.diffusion import DiffusionConfig, DiffusionMode, Scheme, evolve, implicit_step
from diffnet_lab.grid import FilterField, StencilMode, dense_oracle_matrix
from diffnet_lab.inverse import (
    decompose_filter, fourier_deconvolve, inverse_iso_step, laplacian, periodic_gaussian_convolve,
    smoothing_level, unsharp_mask,
)

ISO = DiffusionMode.ISOTROPIC


def test_fourier_round_trip():
    u = np.random.default_rng(0).uniform(size=(32, 32))
    back = fourier_deconvolve(periodic_gaussian_convolve(u, 1.0), 1.0)
    assert np.max(np.abs(back - u)) < 1e-6


def test_zero_time_is_identity():
    u = np.random.default_rng(1).uniform(size=(8, 12))
    np.testing.assert_allclose(fourier_deconvolve(u, 0.0), u, atol=1e-14)
    np.testing.assert_allclose(periodic_gaussian_convolve(u, 0.0), u, atol=1e-14)


def test_noise_is_amplified_without_regularisation():
    rng = np.random.default_rng(2)
    u = rng.uniform(size=(32, 32))
    blurred = periodic_gaussian_convolve(u, 1.0)
    noise = 1e-3 * rng.normal(size=u.shape)
    err = np.linalg.norm(fourier_deconvolve(blurred + noise, 1.0) - u)
    assert err >= 10 * np.linalg.norm(noise)


def test_clamp_bounds_the_amplification():
    rng = np.random.default_rng(3)
    noise = rng.normal(size=(32, 32))
    out = fourier_deconvolve(noise, 1.0, reg_eps=0.1)
    assert np.linalg.norm(out) <= 10 * np.linalg.norm(noise) + 1e-9
    with pytest.raises(ValueError):
        fourier_deconvolve(noise, 1.0, reg_eps=-1.0)


def test_periodic_convolution_preserves_mean():
    u = np.random.default_rng(4).uniform(size=(16, 16))
    assert periodic_gaussian_convolve(u, 0.7).mean() == pytest.approx(u.mean(), abs=1e-15)


def test_inverse_iso_step_matches_dense():
    u = np.random.default_rng(5).uniform(size=(6, 7))
    f = FilterField.constant((6, 7))
    dense = (np.eye(42) - dense_oracle_matrix(f, StencilMode.ZERO_MEAN, 0.2)) @ u.ravel()
    np.testing.assert_allclose(inverse_iso_step(u, 0.2).ravel(), dense, atol=1e-14)
    np.testing.assert_allclose(inverse_iso_step(np.full((3, 3), 2.0), 0.2), 2.0)


def test_inverse_iso_step_undoes_implicit_step():
    u = np.random.default_rng(6).uniform(size=(12, 12))
    v = implicit_step(u, FilterField.constant((12, 12)), 0.3)
    np.testing.assert_allclose(inverse_iso_step(v, 0.3), u, atol=1e-9)


def test_iterated_inverse_recovers_explicit_evolution():
    u0 = np.random.default_rng(7).uniform(size=(16, 16))
    errors = []
    for n in (5, 10, 20):
        dt = 0.5 / n
        u = evolve(u0, DiffusionConfig(dt, n, mode=ISO), Scheme.EXPLICIT)
        for _ in range(n):
            u = inverse_iso_step(u, dt)
        errors.append(np.max(np.abs(u - u0)))
    assert errors[0] > errors[1] > errors[2]


def test_laplacian_kills_constants():
    np.testing.assert_array_equal(laplacian(np.full((4, 4), 3.0)), 0.0)


def test_unsharp_mask_basics():
    u = np.random.default_rng(8).uniform(size=(20, 20))
    np.testing.assert_array_equal(unsharp_mask(u, 1.0, 0.0), u)
    np.testing.assert_allclose(unsharp_mask(np.full((10, 10), 0.4), 1.0, 2.0), 0.4, atol=1e-14)
    assert unsharp_mask(u, 1.5, 0.8).mean() == pytest.approx(u.mean(), abs=1e-10)
    with pytest.raises(ValueError):
        unsharp_mask(u, 0.0, 1.0)


def test_unsharp_mask_taylor_limit():
    # smooth test image so the second-order expansion is meaningful
    y, x = np.mgrid[0:32, 0:32] / 32.0
    u = np.sin(2 * np.pi * x) * np.cos(np.pi * y)
    gaps = []
    for sigma in (0.8, 0.4, 0.2):
        first_order = u - 0.5 * sigma**2 * laplacian(u)
        gaps.append(np.max(np.abs(unsharp_mask(u, sigma, 1.0) - first_order)))
    assert gaps[0] > gaps[1] > gaps[2]


def test_decompose_zero_mean_field():
    f = FilterField.from_planes(*np.random.default_rng(9).normal(size=(4, 5, 5)))
    d = decompose_filter(f)
    np.testing.assert_allclose(d.smoothing, 0.0, atol=1e-14)
    assert d.alpha == pytest.approx(0.0, abs=1e-14)


def test_decompose_constant_offset():
    rng = np.random.default_rng(10)
    directional = rng.normal(size=(4, 5, 5))
    zeta5 = directional.sum(axis=0) - 0.25
    # the center coefficient is -zeta5
    f = FilterField(np.concatenate([directional, -zeta5[None]]))
    d = decompose_filter(f)
    np.testing.assert_allclose(d.smoothing, 0.25, atol=1e-14)
    assert d.alpha == pytest.approx(0.25)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 8), w=st.integers(1, 8), seed=st.integers(0, 2**31 - 1))
def test_decomposition_round_trip(h, w, seed):
    f = FilterField(np.random.default_rng(seed).normal(size=(5, h, w)))
    d = decompose_filter(f)
    np.testing.assert_allclose(d.recompose().planes, f.planes, rtol=0, atol=1e-15 * 8)
    assert d.alpha >= 0
    assert (d.alpha == 0) == f.is_zero_mean()


def test_smoothing_level_axis():
    planes = np.random.default_rng(11).normal(size=(2, 5, 4, 3))
    a = smoothing_level(planes)
    b = smoothing_level(np.moveaxis(planes, 1, -1), axis=-1)
    assert a == pytest.approx(b)
    assert a == pytest.approx(np.mean(np.abs(planes[:, :4].sum(axis=1) + planes[:, 4])))
