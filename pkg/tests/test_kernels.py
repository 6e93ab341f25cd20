import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nadsnet import kernels as K
from nadsnet.exceptions import ShapeError

from oracles import batchnorm_loop, bilinear_loop, conv_loop, maxpool_loop


def rand(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


def test_conv_identity_kernel(rng):
    x = rand(rng, 6, 7, 3)
    w = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
    np.testing.assert_array_equal(K.conv2d(x, w, np.zeros(3)), x)


def test_conv_zero_input_gives_bias(rng):
    b = np.array([0.5, -2.0], dtype=np.float32)
    out = K.conv2d(np.zeros((5, 5, 3), np.float32), rand(rng, 3, 3, 3, 2), b)
    np.testing.assert_array_equal(out, np.broadcast_to(b, (5, 5, 2)))


def test_conv_matches_loop_5x5x2(rng):
    x, w, b = rand(rng, 5, 5, 2), rand(rng, 3, 3, 2, 1), rand(rng, 1)
    np.testing.assert_allclose(K.conv2d(x, w, b), conv_loop(x, w, b), atol=1e-5)


@pytest.mark.parametrize("k,stride,padding", [(1, 2, "same"), (3, 2, "same"), (7, 2, "same"), (3, 1, "valid"),
                                              (2, 2, "valid"), (5, 3, "same")])
def test_conv_strides_and_padding(rng, k, stride, padding):
    x, w, b = rand(rng, 9, 8, 3), rand(rng, k, k, 3, 4), rand(rng, 4)
    out = K.conv2d(x, w, b, stride, padding)
    ref = conv_loop(x, w, b, stride, padding)
    assert out.shape == ref.shape
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_conv_channel_mismatch_names_layer(rng):
    with pytest.raises(ShapeError, match="layer 'c2_b0_1'"):
        K.conv2d(rand(rng, 4, 4, 3), rand(rng, 3, 3, 2, 1), name="c2_b0_1")


@settings(max_examples=50, deadline=None)
@given(alpha=st.floats(-100, 100, allow_nan=False), seed=st.integers(0, 2**31))
def test_conv_homogeneity(alpha, seed):
    r = np.random.default_rng(seed)
    x, w = rand(r, 5, 6, 2), rand(r, 3, 3, 2, 3)
    lhs = K.conv2d(np.float32(alpha) * x, w)
    rhs = np.float32(alpha) * K.conv2d(x, w)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5 * max(1.0, abs(alpha)))


def test_batchnorm_identity(rng):
    x = rand(rng, 3, 3, 4)
    one, zero = np.ones(4), np.zeros(4)
    np.testing.assert_array_equal(K.batchnorm_infer(x, one, zero, zero, one, eps=0.0), x)


def test_batchnorm_constant_input_maps_to_shift():
    x = np.full((2, 2, 3), 1.75, np.float32)
    out = K.batchnorm_infer(x, [2, 3, 4], [0.5, -1, 7], [1.75] * 3, [4, 1, 9], eps=1e-3)
    np.testing.assert_allclose(out, np.broadcast_to([0.5, -1, 7], (2, 2, 3)), atol=1e-7)


def test_batchnorm_matches_scalar_loop(rng):
    x = rand(rng, 2, 2, 3)
    scale, shift, mean = rand(rng, 3), rand(rng, 3), rand(rng, 3)
    var = rng.random(3) + 0.1
    np.testing.assert_allclose(K.batchnorm_infer(x, scale, shift, mean, var, eps=1e-3),
                               batchnorm_loop(x, scale, shift, mean, var, 1e-3), atol=1e-6)


def test_batchnorm_length_mismatch():
    with pytest.raises(ShapeError):
        K.batchnorm_infer(np.zeros((2, 2, 3)), [1, 1], [0, 0], [0, 0], [1, 1])


def test_relu_values():
    out = K.relu(np.array([-1.0, 2.0, 0.0], np.float32).reshape(1, 3, 1))
    assert out.ravel().tolist() == [0.0, 2.0, 0.0]


def test_max_pool_constant():
    x = np.full((6, 6, 2), 3.5, np.float32)
    np.testing.assert_array_equal(K.max_pool(x, 3, 2), np.full((3, 3, 2), 3.5, np.float32))


@pytest.mark.parametrize("k,stride", [(2, 2), (3, 2), (3, 1)])
def test_max_pool_matches_loop(rng, k, stride):
    x = rand(rng, 7, 6, 2)
    np.testing.assert_array_equal(K.max_pool(x, k, stride), maxpool_loop(x, k, stride))


def test_concat_shape():
    out = K.concat_channels([np.zeros((4, 4, 2)), np.ones((4, 4, 3))])
    assert out.shape == (4, 4, 5)


def test_concat_and_add_mismatch():
    with pytest.raises(ShapeError):
        K.concat_channels([np.zeros((4, 4, 2)), np.zeros((3, 4, 2))])
    with pytest.raises(ShapeError):
        K.add(np.zeros((4, 4, 2)), np.zeros((4, 4, 3)))


def test_upsample_factor_one_is_identity(rng):
    x = rand(rng, 3, 5, 2)
    np.testing.assert_array_equal(K.bilinear_upsample(x, 1), x)


def test_upsample_constant():
    out = K.bilinear_upsample(np.full((3, 4, 2), -0.25, np.float32), 4)
    np.testing.assert_array_equal(out, np.full((12, 16, 2), -0.25, np.float32))


def test_upsample_2x2_closed_form():
    x = np.array([[1, 2], [3, 4]], np.float32)[:, :, None]
    out = K.bilinear_upsample(x, 2)[:, :, 0]
    # half-pixel sampling: source coords -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1)
    axis = [0.0, 0.25, 0.75, 1.0]
    expected = np.array([[1 + yy * 2 + xx for xx in axis] for yy in axis])
    np.testing.assert_allclose(out, expected, atol=1e-6)
    np.testing.assert_allclose(out, bilinear_loop(x, 2)[:, :, 0], atol=1e-6)


def test_upsample_nearest():
    x = np.arange(4, dtype=np.float32).reshape(2, 2, 1)
    out = K.bilinear_upsample(x, 3, mode="nearest")
    assert out.shape == (6, 6, 1)
    assert out[5, 5, 0] == 3 and out[0, 2, 0] == 0


def test_sigmoid_bounds_and_center():
    x = np.array([-1e4, -3, 0, 3, 1e4], np.float32).reshape(1, 5, 1)
    out = K.sigmoid(x).ravel()
    assert out[2] == 0.5
    assert np.all((out >= 0) & (out <= 1)) and np.all(np.isfinite(out))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_kernels_stay_finite(seed, scale):
    r = np.random.default_rng(seed)
    x = (rand(r, 8, 8, 3) * scale).astype(np.float32)
    outs = [K.conv2d(x, rand(r, 3, 3, 3, 2), stride=2), K.max_pool(x, 3, 2), K.relu(x),
            K.bilinear_upsample(x, 2), K.sigmoid(x), K.tanh(x)]
    assert all(np.isfinite(o).all() for o in outs)
