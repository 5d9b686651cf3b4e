import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrecnn import tensor as T
from oracles import central_difference, close, direct_conv2d


def rng(seed=0):
    return np.random.default_rng(seed)


# ----------------------------------------------------------------- conv2d
def test_conv_shape_vgg_stem():
    x = np.zeros((1, 3, 224, 224), np.float32)
    p = T.ConvParams(np.zeros((64, 3, 3, 3)), np.zeros(64), stride=1, pad=1)
    assert T.conv2d_forward(x, p).shape == (1, 64, 224, 224)


def test_conv_sum_of_nine_ones():
    x = np.ones((1, 1, 3, 3), np.float32)
    p = T.ConvParams(np.ones((1, 1, 3, 3)), np.zeros(1))
    out = T.conv2d_forward(x, p)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 9.0


def test_conv_matches_direct_loop():
    r = rng(1)
    x = r.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = r.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = r.standard_normal(4).astype(np.float32)
    out = T.conv2d_forward(x, T.ConvParams(w, b, 1, 1))
    np.testing.assert_allclose(out, direct_conv2d(x, w, b, 1, 1), atol=1e-5, rtol=0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 4), o=st.integers(1, 3), h=st.integers(3, 9),
       w=st.integers(3, 9), k=st.integers(1, 3), stride=st.integers(1, 2), pad=st.integers(0, 2),
       seed=st.integers(0, 2**31))
def test_conv_oracle_property(n, c, o, h, w, k, stride, pad, seed):
    if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
        return
    r = rng(seed)
    x = r.standard_normal((n, c, h, w)).astype(np.float32)
    wt = r.standard_normal((o, c, k, k)).astype(np.float32)
    b = r.standard_normal(o).astype(np.float32)
    out = T.conv2d_forward(x, T.ConvParams(wt, b, stride, pad))
    np.testing.assert_allclose(out, direct_conv2d(x, wt, b, stride, pad), atol=1e-5, rtol=0)


def test_conv_rejects_channel_mismatch():
    p = T.ConvParams(np.zeros((2, 3, 3, 3)), np.zeros(2))
    with pytest.raises(T.ShapeError, match="channel"):
        T.conv2d_forward(np.zeros((1, 4, 5, 5)), p)


def test_conv_rejects_non_integral_extent():
    p = T.ConvParams(np.zeros((1, 1, 2, 2)), np.zeros(1), stride=2)
    with pytest.raises(T.ShapeError, match="non-integral"):
        T.conv2d_forward(np.zeros((1, 1, 5, 5)), p)


def test_conv_params_validate():
    with pytest.raises(ValueError):
        T.ConvParams(np.zeros((1, 1, 3, 3)), np.zeros(1), stride=0)
    with pytest.raises(T.ShapeError):
        T.ConvParams(np.zeros((2, 1, 3, 3)), np.zeros(1))


def test_conv_backward_zero_upstream():
    r = rng(2)
    x = r.standard_normal((1, 2, 5, 5)).astype(np.float32)
    p = T.ConvParams(r.standard_normal((3, 2, 3, 3)), r.standard_normal(3), 1, 1)
    gx, gw, gb = T.conv2d_backward(x, p, np.zeros((1, 3, 5, 5), np.float32))
    assert not gx.any() and not gw.any() and not gb.any()
    assert gx.shape == x.shape and gw.shape == p.weights.shape and gb.shape == (3,)


def test_conv_backward_bias_is_channel_sum():
    r = rng(3)
    x = r.standard_normal((2, 2, 6, 6)).astype(np.float32)
    p = T.ConvParams(r.standard_normal((3, 2, 3, 3)), np.zeros(3), 1, 0)
    g = r.standard_normal((2, 3, 4, 4)).astype(np.float32)
    _, _, gb = T.conv2d_backward(x, p, g)
    np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)), rtol=1e-6)


def test_conv_backward_rejects_bad_grad_shape():
    p = T.ConvParams(np.zeros((1, 1, 2, 2)), np.zeros(1))
    with pytest.raises(T.ShapeError):
        T.conv2d_backward(np.zeros((1, 1, 4, 4)), p, np.zeros((1, 1, 4, 4)))


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0)])
def test_conv_backward_finite_differences(stride, pad):
    r = rng(4 + stride + pad)
    x = r.standard_normal((1, 1, 4, 4)).astype(np.float32)
    w = r.standard_normal((1, 1, 2, 2)).astype(np.float32)
    b = r.standard_normal(1).astype(np.float32)
    p = T.ConvParams(w, b, stride, pad)
    out_shape = T.conv2d_forward(x, p).shape
    g = r.standard_normal(out_shape).astype(np.float32)
    gx, gw, gb = T.conv2d_backward(x, p, g)

    def loss_x(xx):
        return np.sum(g.astype(np.float64) * T.conv2d_forward(xx, p))

    def loss_w(ww):
        return np.sum(g.astype(np.float64) * T.conv2d_forward(x, T.ConvParams(ww, b, stride, pad)))

    def loss_b(bb):
        return np.sum(g.astype(np.float64) * T.conv2d_forward(x, T.ConvParams(w, bb, stride, pad)))

    for idx in np.ndindex(x.shape):
        assert close(gx[idx], central_difference(loss_x, x, idx))
    for idx in np.ndindex(w.shape):
        assert close(gw[idx], central_difference(loss_w, w, idx))
    assert close(gb[0], central_difference(loss_b, b, (0,)))


# ---------------------------------------------------------------- maxpool
def test_maxpool_simple():
    out, idx = T.maxpool2x2_forward(np.array([[[[1, 2], [3, 4]]]], np.float32))
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 4
    grad = T.maxpool2x2_backward(idx, np.ones((1, 1, 1, 1), np.float32))
    np.testing.assert_array_equal(grad[0, 0], [[0, 0], [0, 1]])


def test_maxpool_halves_224():
    out, _ = T.maxpool2x2_forward(np.zeros((1, 2, 224, 224), np.float32))
    assert out.shape == (1, 2, 112, 112)


def test_maxpool_constant_input_tie_rule():
    x = np.full((1, 2, 4, 6), 3.0, np.float32)
    out, idx = T.maxpool2x2_forward(x)
    assert np.all(out == 3.0)
    grad = T.maxpool2x2_backward(idx, np.ones(out.shape, np.float32))
    # first element of each window (top-left) receives the whole gradient
    assert grad.sum() == out.size
    np.testing.assert_array_equal(grad[:, :, ::2, ::2], 1.0)
    assert grad[:, :, 1::2, :].sum() == 0 and grad[:, :, :, 1::2].sum() == 0


def test_maxpool_rejects_odd_extent():
    with pytest.raises(T.ShapeError, match="even"):
        T.maxpool2x2_forward(np.zeros((1, 1, 5, 4), np.float32))


def test_maxpool_rejects_stale_index():
    _, idx = T.maxpool2x2_forward(np.zeros((1, 1, 4, 4), np.float32))
    with pytest.raises(T.ShapeError):
        T.maxpool2x2_backward(idx, np.zeros((1, 1, 1, 1), np.float32))
    with pytest.raises(T.ShapeError):
        T.maxpool2x2_backward(idx, np.zeros((1, 1, 2, 2), np.float32), input_shape=(1, 1, 6, 6))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), h=st.sampled_from([2, 4, 6, 8]), w=st.sampled_from([2, 4, 8]))
def test_maxpool_conserves_gradient_mass(seed, h, w):
    r = rng(seed)
    x = r.standard_normal((2, 3, h, w)).astype(np.float32)
    out, idx = T.maxpool2x2_forward(x)
    g = r.standard_normal(out.shape).astype(np.float32)
    grad = T.maxpool2x2_backward(idx, g, x.shape)
    assert np.count_nonzero(grad) <= g.size
    # each window holds exactly one (nonzero) entry so the sums agree exactly
    np.testing.assert_array_equal(np.sort(grad[grad != 0]), np.sort(g[g != 0]))
    assert math.isclose(float(grad.astype(np.float64).sum()), float(g.astype(np.float64).sum()),
                        rel_tol=0, abs_tol=1e-9)


def test_maxpool_finite_differences():
    x = rng(5).permutation(16).astype(np.float32).reshape(1, 1, 4, 4)
    out, idx = T.maxpool2x2_forward(x)
    g = rng(6).standard_normal(out.shape).astype(np.float32)
    grad = T.maxpool2x2_backward(idx, g)

    def loss(xx):
        return np.sum(g.astype(np.float64) * T.maxpool2x2_forward(xx)[0])

    # values are distinct integers, so +-1e-2 never changes a window's winner
    for i in np.ndindex(x.shape):
        assert close(grad[i], central_difference(loss, x, i))


# ------------------------------------------------------------------- relu
def test_relu_values():
    np.testing.assert_array_equal(T.relu(np.array([-1, 0, 2], np.float32)), [0, 0, 2])


def test_relu_all_negative():
    x = -np.abs(rng(7).standard_normal((2, 3))).astype(np.float32) - 0.1
    assert not T.relu(x).any()
    assert not T.relu_backward(x, np.ones_like(x)).any()


def test_relu_backward_zero_at_origin():
    g = T.relu_backward(np.array([0.0, 1.0], np.float32), np.array([5.0, 5.0], np.float32))
    np.testing.assert_array_equal(g, [0.0, 5.0])


def test_relu_finite_differences():
    r = rng(8)
    x = r.standard_normal(20).astype(np.float32)
    x[np.abs(x) < 0.05] = 0.5  # keep probes away from the kink
    g = r.standard_normal(20).astype(np.float32)
    grad = T.relu_backward(x, g)
    for i in range(20):
        assert close(grad[i], central_difference(lambda z: np.sum(g * T.relu(z).astype(np.float64)), x, (i,)))


# ----------------------------------------------------------------- linear
def test_linear_identity_and_bias():
    x = rng(9).standard_normal((3, 4)).astype(np.float32)
    np.testing.assert_array_equal(T.linear_forward(x, np.eye(4), np.zeros(4)), x)
    b = np.arange(5, dtype=np.float32)
    np.testing.assert_array_equal(T.linear_forward(np.zeros((2, 4)), np.zeros((4, 5)), b), [b, b])


def test_linear_rejects_mismatch():
    with pytest.raises(T.ShapeError, match="inner"):
        T.linear_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))


def test_linear_finite_differences():
    r = rng(10)
    x = r.standard_normal((2, 3)).astype(np.float32)
    w = r.standard_normal((3, 4)).astype(np.float32)
    b = r.standard_normal(4).astype(np.float32)
    g = r.standard_normal((2, 4)).astype(np.float32)
    gx, gw, gb = T.linear_backward(x, w, g)
    g64 = g.astype(np.float64)
    for idx in np.ndindex(x.shape):
        assert close(gx[idx], central_difference(lambda z: np.sum(g64 * T.linear_forward(z, w, b)), x, idx))
    for idx in np.ndindex(w.shape):
        assert close(gw[idx], central_difference(lambda z: np.sum(g64 * T.linear_forward(x, z, b)), w, idx))
    for idx in np.ndindex(b.shape):
        assert close(gb[idx], central_difference(lambda z: np.sum(g64 * T.linear_forward(x, w, z)), b, idx))


# ----------------------------------------------------------------- concat
def test_concat_shapes():
    out = T.concat_channels(np.zeros((1, 2, 7, 7)), np.ones((1, 3, 7, 7)))
    assert out.shape == (1, 5, 7, 7)
    assert not out[:, :2].any() and out[:, 2:].all()


def test_concat_empty_is_identity():
    x = rng(11).standard_normal((2, 3, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(T.concat_channels(x, np.zeros((2, 0, 4, 4))), x)


def test_concat_split_roundtrip():
    r = rng(12)
    ga = r.standard_normal((2, 2, 3, 3)).astype(np.float32)
    gb = r.standard_normal((2, 5, 3, 3)).astype(np.float32)
    a, b = T.split_channels(T.concat_channels(ga, gb), 2)
    np.testing.assert_array_equal(a, ga)
    np.testing.assert_array_equal(b, gb)


def test_concat_rejects_spatial_mismatch():
    with pytest.raises(T.ShapeError):
        T.concat_channels(np.zeros((1, 2, 7, 7)), np.zeros((1, 2, 6, 7)))
    with pytest.raises(T.ShapeError):
        T.concat_channels(np.zeros((1, 2, 7, 7)), np.zeros((2, 2, 7, 7)))


# ---------------------------------------------------------------- softmax
def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(np.zeros((1, 7))), np.full((1, 7), 1 / 7), rtol=1e-6)


def test_softmax_shift_invariance_bitwise():
    z = np.array([[0.5, -1.25, 3.0, 0.0]], np.float32)
    np.testing.assert_array_equal(T.softmax(z), T.softmax(z + np.float32(64.0)))


def test_softmax_hand_value():
    np.testing.assert_allclose(T.softmax(np.array([[math.log(2), 0.0]])), [[2 / 3, 1 / 3]], rtol=1e-6)


def test_softmax_large_logits_stay_finite():
    p = T.softmax(np.array([[1e4, 0.0, -1e4]], np.float32))
    assert np.isfinite(p).all() and p[0, 0] == 1.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 5), k=st.integers(1, 9))
def test_softmax_rows_are_distributions(seed, n, k):
    z = (rng(seed).standard_normal((n, k)) * 5).astype(np.float32)
    p = T.softmax(z)
    assert (p > 0).all() and (p <= 1).all()
    np.testing.assert_allclose(p.astype(np.float64).sum(axis=1), 1.0, atol=1e-6)


def test_determinism_bitwise():
    r = rng(13)
    x = r.standard_normal((2, 3, 8, 8)).astype(np.float32)
    p = T.ConvParams(r.standard_normal((4, 3, 3, 3)), r.standard_normal(4), 1, 1)
    a, b = T.conv2d_forward(x, p), T.conv2d_forward(x.copy(), p)
    assert a.tobytes() == b.tobytes()
    g = r.standard_normal(a.shape).astype(np.float32)
    for u, v in zip(T.conv2d_backward(x, p, g), T.conv2d_backward(x, p, g)):
        assert u.tobytes() == v.tobytes()
