import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffnet_lab import autodiff as ad
from diffnet_lab.verification import GRAD_TOL, check_gradient, network_gradient_error, primitive_cases


def naive_conv(x, w, b):
    bs, h, wd, cin = x.shape
    cout = w.shape[0]
    out = np.zeros((bs, h, wd, cout))
    for n in range(bs):
        for o in range(cout):
            for i in range(h):
                for j in range(wd):
                    acc = b[o]
                    for c in range(cin):
                        for ki in range(3):
                            for kj in range(3):
                                ii, jj = i + ki - 1, j + kj - 1
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += w[o, c, ki, kj] * x[n, ii, jj, c]
                    out[n, i, j, o] = acc
    return out


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 6, 3))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    np.testing.assert_allclose(ad.conv3x3(x, w, b).value, naive_conv(x, w, b), rtol=0, atol=1e-12)


def test_conv_identity_and_zero_kernels():
    x = np.random.default_rng(1).normal(size=(1, 4, 4, 2))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1.0
    np.testing.assert_array_equal(ad.conv3x3(x, w, np.zeros(2)).value, x)
    out = ad.conv3x3(x, np.zeros((3, 2, 3, 3)), np.array([1.0, 2.0, 3.0])).value
    np.testing.assert_array_equal(out, np.broadcast_to([1.0, 2.0, 3.0], (1, 4, 4, 3)))


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        ad.conv3x3(np.zeros((1, 4, 4, 2)), np.zeros((3, 1, 3, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        ad.conv3x3(np.zeros((1, 4, 4, 2)), np.zeros((3, 2, 3, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        ad.conv3x3(np.zeros((4, 4, 2)), np.zeros((3, 2, 3, 3)), np.zeros(3))


@pytest.mark.parametrize("name,fn,inputs", primitive_cases(), ids=[c[0] for c in primitive_cases()])
def test_primitive_gradients(name, fn, inputs):
    assert check_gradient(fn, inputs, n_coords=10) < 1e-5


def test_network_gradient():
    assert network_gradient_error() < GRAD_TOL


def test_backward_requires_scalar_and_records():
    x = ad.Param("x", np.ones((2, 2)))
    with ad.Tape() as tape:
        y = ad.mul(x, x)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(y)
    with ad.Tape() as tape:
        with pytest.raises(ValueError, match="empty"):
            tape.backward(ad.Tensor(1.0))


def test_nothing_recorded_outside_tape():
    x = ad.Param("x", np.ones(3))
    y = ad.relu(x)
    assert type(y) is ad.Tensor and not y.requires_grad


def test_constants_do_not_record():
    with ad.Tape() as tape:
        ad.add(np.ones(3), np.ones(3))
    assert tape.records == []


def test_scale_gradient_is_input_sum():
    x = np.random.default_rng(2).normal(size=(2, 3, 3, 1))
    s = ad.Param("s", np.array([0.7]))
    with ad.Tape() as tape:
        tape.backward(ad.sum_all(ad.scale(x, s)))
    assert s.grad[0] == pytest.approx(x.sum(), rel=1e-14)
    with pytest.raises(ValueError):
        ad.scale(x, np.ones(2))


def test_relu_values():
    np.testing.assert_array_equal(ad.relu(np.array([-1.0, 0.0, 2.0])).value, [0.0, 0.0, 2.0])


def test_mse_of_identical_arrays():
    x = ad.Param("x", np.random.default_rng(3).normal(size=(1, 3, 3, 1)))
    with ad.Tape() as tape:
        loss = ad.mse_loss(x, x.value.copy())
        tape.backward(loss)
    assert float(loss.value) == 0.0
    np.testing.assert_array_equal(x.grad, 0.0)


def test_gradients_accumulate_over_reuse():
    x = ad.Param("x", np.array([3.0]))
    with ad.Tape() as tape:
        tape.backward(ad.sum_all(ad.add(ad.mul(x, x), x)))
    assert x.grad[0] == pytest.approx(7.0)
    with ad.Tape() as tape:
        tape.backward(ad.sum_all(x))
    assert x.grad[0] == pytest.approx(8.0)


def test_backward_is_deterministic():
    def grads():
        rng = np.random.default_rng(4)
        u = rng.normal(size=(2, 5, 5, 1))
        p = ad.Param("p", rng.normal(size=(2, 5, 5, 5)))
        with ad.Tape() as tape:
            tape.backward(ad.mse_loss(ad.stencil5(u, p), np.zeros_like(u)))
        return p.grad

    np.testing.assert_array_equal(grads(), grads())


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ad.add(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        ad.stencil5(np.zeros((1, 3, 3, 1)), np.zeros((1, 3, 3, 4)))
    with pytest.raises(ValueError):
        ad.diffusion_stencil(np.zeros((1, 3, 3, 1)), np.zeros((4, 3, 2)))


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6), d=st.integers(0, 3), seed=st.integers(0, 2**31 - 1))
def test_shift_gradient_is_adjoint(h, w, d, seed):
    rng = np.random.default_rng(seed)
    x = ad.Param("x", rng.normal(size=(1, h, w, 2)))
    g = rng.normal(size=(1, h, w, 2))
    with ad.Tape() as tape:
        y = ad.shift(x, d)
        tape.backward(ad.sum_all(ad.mul(y, ad.Tensor(g))))
    assert np.sum(y.value * g) == pytest.approx(np.sum(x.value * x.grad), abs=1e-12)
