import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffnet_lab.grid import FilterField, StencilMode, apply_stencil, as_image, dense_oracle_matrix, image_stats
from diffnet_lab.verification import stencil_oracle_errors


def random_field(rng, h, w):
    return FilterField(rng.normal(size=(5, h, w)))


def test_as_image_rejects_bad_input():
    with pytest.raises(ValueError):
        as_image(np.zeros(4))
    with pytest.raises(ValueError):
        as_image(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        as_image([[1.0, np.nan]])


def test_filter_field_shape_check():
    with pytest.raises(ValueError):
        FilterField(np.zeros((4, 3, 3)))


def test_named_planes_and_zero_mean_center():
    rng = np.random.default_rng(0)
    n, w, s, e = rng.normal(size=(4, 3, 4))
    f = FilterField.from_planes(n, w, s, e)
    np.testing.assert_array_equal(f.north, n)
    np.testing.assert_array_equal(f.east, e)
    np.testing.assert_allclose(f.center, -(n + w + s + e))
    assert f.is_zero_mean(atol=1e-15)
    assert not FilterField.constant((3, 3), 1.0, center=0.0).is_zero_mean()
    with pytest.raises(AttributeError):
        f.up


def test_laplacian_of_delta():
    u = np.zeros((5, 5))
    u[2, 2] = 1.0
    out = apply_stencil(u, FilterField.constant((5, 5)), StencilMode.ZERO_MEAN)
    expect = np.zeros((5, 5))
    expect[2, 2] = -4.0
    expect[1, 2] = expect[3, 2] = expect[2, 1] = expect[2, 3] = 1.0
    np.testing.assert_array_equal(out, expect)


def test_free_center_ignores_nothing():
    u = np.arange(12.0).reshape(3, 4)
    f = FilterField.constant((3, 4), 0.0, center=2.0)
    np.testing.assert_array_equal(apply_stencil(u, f, StencilMode.FREE_CENTER, dt=0.5), u)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        apply_stencil(np.zeros((3, 3)), FilterField.constant((3, 4)), StencilMode.ZERO_MEAN)


@pytest.mark.parametrize("mode", list(StencilMode))
def test_matches_dense_oracle(mode):
    rng = np.random.default_rng(1)
    for h, w in ((1, 1), (1, 6), (5, 1), (7, 9), (16, 16)):
        f = random_field(rng, h, w)
        u = rng.normal(size=(h, w))
        dense = dense_oracle_matrix(f, mode, 0.3) @ u.ravel()
        np.testing.assert_allclose(apply_stencil(u, f, mode, 0.3).ravel(), dense, rtol=0, atol=1e-12)


def test_oracle_suite_is_tight():
    assert max(stencil_oracle_errors(n_cases=50, seed=3)) < 1e-12


def test_dense_oracle_size_guard():
    with pytest.raises(ValueError):
        dense_oracle_matrix(FilterField.constant((65, 64)), StencilMode.ZERO_MEAN)


def test_zero_mean_rows_sum_to_zero():
    f = random_field(np.random.default_rng(2), 6, 5)
    mat = dense_oracle_matrix(f, StencilMode.ZERO_MEAN)
    np.testing.assert_allclose(mat.sum(axis=1), 0.0, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(
    h=st.integers(1, 9), w=st.integers(1, 9), c=st.floats(-5, 5), seed=st.integers(0, 2**31 - 1)
)
def test_zero_mean_annihilates_constants(h, w, c, seed):
    f = random_field(np.random.default_rng(seed), h, w)
    out = apply_stencil(np.full((h, w), c), f, StencilMode.ZERO_MEAN)
    assert np.all(out == 0.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-10, 10)), st.floats(0.01, 3))
def test_linearity_in_dt(u, dt):
    f = FilterField.constant((4, 5), 0.7, center=-1.3)
    a = apply_stencil(u, f, StencilMode.FREE_CENTER, dt)
    b = dt * apply_stencil(u, f, StencilMode.FREE_CENTER, 1.0)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_image_stats():
    s = image_stats([[3.0, 4.0]])
    assert s == {"min": 3.0, "max": 4.0, "mean": 3.5, "l2norm": 5.0}
