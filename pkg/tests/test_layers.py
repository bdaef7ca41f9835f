import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from signgan.autodiff import GraphError, Tensor, grad, grad_check_leaves, ops
from signgan.layers import (
    EPS,
    Embedding,
    SelfAttention,
    WSConv2d,
    embed_label,
    fade_blend,
    from_rgb,
    minibatch_stddev,
    pixel_norm,
    to_rgb,
    weight_standardize,
    weight_standardize_np,
)


# ---------------------------------------------------- weight standardization

def test_ws_two_element_row():
    got = weight_standardize(np.array([[1.0, -1.0]])).data
    np.testing.assert_allclose(got, [[1 / math.sqrt(1 + EPS), -1 / math.sqrt(1 + EPS)]], rtol=1e-15)


def test_ws_constant_row_is_zero():
    np.testing.assert_array_equal(weight_standardize(np.full((1, 3), 2.5)).data, np.zeros((1, 3)))


def test_ws_fixed_point(rng):
    w = rng.standard_normal((4, 16))
    w = (w - w.mean(1, keepdims=True)) / np.sqrt((w * w).mean(1, keepdims=True) - w.mean(1, keepdims=True) ** 2)
    np.testing.assert_allclose(weight_standardize(w).data, w, atol=1e-7)


def test_ws_rows_zero_mean_and_idempotent_on_initialized_weights(rng):
    # Raw weights are drawn N(0, 1); with I*k*k >= 27 entries per row the row
    # variance sits near 1 and the drift law below keeps re-standardization
    # under 1e-8. Short rows (fromRGB, 4 entries) can have small variance and
    # drift further, as the law predicts.
    for layer in (WSConv2d(3, 8, 3, rng=rng), WSConv2d(64, 64, 3, rng=rng), WSConv2d(65, 64, 3, rng=rng)):
        s = layer.standardized_weight().data.reshape(layer.out_ch, -1)
        assert np.abs(s.mean(axis=1)).max() < 1e-10
        again = weight_standardize(s).data
        assert np.abs(again - s).max() <= 1e-8


@pytest.mark.parametrize("scale", [0.1, 1.0, 3.0])
def test_ws_restandardization_drift_law(scale, rng):
    # sigma^2 of a standardized row is v / (v + eps), so a second pass rescales
    # by (1 + eps (1 - 1/v))^(-1/2): drift ~ |w_hat| eps |1 - 1/v| / 2
    w = rng.standard_normal((6, 27)) * scale + 0.5
    v = w.var(axis=1, keepdims=True)
    s = weight_standardize(w).data
    drift = weight_standardize(s).data - s
    predicted = -s * EPS * (1 - 1 / v) / 2
    assert np.abs(drift - predicted).max() <= 1e-14 + 1e-6 * np.abs(predicted).max()


def test_ws_tensor_and_numpy_versions_agree(rng):
    w = rng.standard_normal((5, 9))
    np.testing.assert_allclose(weight_standardize(w).data, weight_standardize_np(w), rtol=1e-14, atol=1e-15)


def test_ws_conv_constant_weights_give_activation_of_bias(rng):
    layer = WSConv2d(3, 2, 1, "leaky_relu", rng=rng)
    layer.weight.data = np.full((2, 3, 1, 1), 0.4)
    layer.bias.data = np.array([0.5, -1.0])
    y = layer(rng.standard_normal((2, 3, 4, 4))).data
    np.testing.assert_allclose(y[:, 0], 0.5, atol=1e-12)
    np.testing.assert_allclose(y[:, 1], -0.2, atol=1e-12)


def test_ws_conv_signed_channel_mix(rng):
    # rows [1, -1] and [-1, 1] are fixed points (up to eps) of standardization
    layer = WSConv2d(2, 2, 1, "linear", rng=rng)
    layer.weight.data = np.array([[1.0, -1.0], [-1.0, 1.0]]).reshape(2, 2, 1, 1)
    x = rng.standard_normal((1, 2, 3, 3))
    y = layer(x).data
    s = 1 / math.sqrt(1 + EPS)
    np.testing.assert_allclose(y[0, 0], s * (x[0, 0] - x[0, 1]), rtol=1e-14)
    np.testing.assert_allclose(y[0, 1], s * (x[0, 1] - x[0, 0]), rtol=1e-14)


def test_ws_conv_preserves_spatial_extent(rng):
    layer = WSConv2d(3, 5, 3, rng=rng)
    assert layer(rng.standard_normal((2, 3, 7, 7))).shape == (2, 5, 7, 7)
    with pytest.raises(GraphError):
        layer(rng.standard_normal((2, 4, 7, 7)))


def test_ws_conv_gradcheck(rng):
    layer = WSConv2d(2, 3, 3, "tanh", rng=rng)
    x = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
    assert grad_check_leaves(lambda: layer(x), [x, layer.weight, layer.bias]) < 1e-4


# ------------------------------------------------------------- pixel norm

def test_pixel_norm_zero_input():
    np.testing.assert_array_equal(pixel_norm(np.zeros((1, 4, 2, 2))).data, np.zeros((1, 4, 2, 2)))


def test_pixel_norm_constant_twos():
    y = pixel_norm(np.full((1, 4, 1, 1), 2.0)).data
    np.testing.assert_allclose(y, 2 / math.sqrt(4 + EPS), rtol=1e-15)
    np.testing.assert_allclose(y, 1.0, atol=1e-8)


@pytest.mark.parametrize("v", [3.5, -0.25])
def test_pixel_norm_single_channel_sign(v):
    assert pixel_norm(np.array([[[[v]]]])).data.item() == pytest.approx(np.sign(v), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31 - 1), st.floats(-2, 2))
def test_pixel_norm_unit_rms(n, seed, log_scale):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, n, 3, 3))
    rms = np.sqrt((x ** 2).mean(axis=1, keepdims=True))
    x = x / rms * 1e-2 * 10 ** (abs(log_scale))  # per-location RMS >= 1e-2
    out = pixel_norm(x).data
    out_rms = np.sqrt((out ** 2).mean(axis=1))
    assert np.all(np.abs(out_rms - 1) <= 1e-3)


# ------------------------------------------------------------------ fade

def test_fade_endpoints_and_midpoint(rng):
    a, b = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 4, 4))
    np.testing.assert_array_equal(fade_blend(a, b, 0.0).data, a)
    np.testing.assert_array_equal(fade_blend(a, b, 1.0).data, b)
    np.testing.assert_allclose(fade_blend(a, b, 0.5).data, (a + b) / 2, rtol=1e-15)


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_fade_rejects_alpha_outside_unit_interval(alpha):
    with pytest.raises(ValueError):
        fade_blend(np.zeros(3), np.ones(3), alpha)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-5, 5)), arrays(np.float64, 6, elements=st.floats(-5, 5)),
       st.floats(0, 1), st.floats(0, 1))
def test_fade_monotone_in_alpha(a, b, a1, a2):
    lo, hi = sorted((a1, a2))
    y_lo, y_hi = fade_blend(a, b, lo).data, fade_blend(a, b, hi).data
    up = b >= a
    assert np.all(y_hi[up] >= y_lo[up] - 1e-12)
    assert np.all(y_hi[~up] <= y_lo[~up] + 1e-12)


def test_fade_with_tensor_alpha_is_differentiable(rng):
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    alpha = Tensor(np.array([0.3]), requires_grad=True)
    g = grad(ops.sum(fade_blend(a, b, alpha)), alpha)
    assert g.data.item() == pytest.approx((b - a).sum())


# ------------------------------------------------------------ attention

def test_attention_identity_when_gamma_zero(rng):
    layer = SelfAttention(16, rng=rng)
    x = rng.standard_normal((2, 16, 4, 4))
    assert layer.gamma.data.item() == 0.0
    y = layer(x).data
    assert np.array_equal(y, x)


def test_attention_single_position(rng):
    layer = SelfAttention(8, rng=rng)
    layer.gamma.data[:] = 0.7
    x = rng.standard_normal((1, 8, 1, 1))
    np.testing.assert_array_equal(layer.attention_map(x).data, [[[1.0]]])
    expected = x + 0.7 * layer.out(layer.value(x)).data
    np.testing.assert_allclose(layer(x).data, expected, rtol=1e-14)


def test_attention_rows_stochastic(rng):
    layer = SelfAttention(8, rng=rng)
    for _ in range(5):
        beta = layer.attention_map(rng.standard_normal((2, 8, 3, 5)) * 3).data
        assert (beta >= 0).all()
        assert np.abs(beta.sum(axis=-1) - 1).max() < 1e-6


def test_attention_width_must_divide_by_eight():
    with pytest.raises(ValueError):
        SelfAttention(12)


def test_attention_gradcheck(rng):
    layer = SelfAttention(8, rng=rng)
    layer.gamma.data[:] = 0.5
    x = Tensor(rng.standard_normal((1, 8, 2, 2)), requires_grad=True)
    leaves = [x] + list(layer.parameters().values())
    assert grad_check_leaves(lambda: layer(x), leaves) < 1e-4


# ---------------------------------------------------- minibatch stddev

def test_mbstd_identical_images(rng):
    x = np.repeat(rng.standard_normal((1, 3, 4, 4)), 5, axis=0)
    out = minibatch_stddev(x).data
    assert out.shape == (5, 4, 4, 4)
    np.testing.assert_allclose(out[:, 3], math.sqrt(EPS), rtol=1e-12)
    np.testing.assert_array_equal(out[:, :3], x)


def test_mbstd_single_sample(rng):
    out = minibatch_stddev(rng.standard_normal((1, 2, 3, 3))).data
    np.testing.assert_allclose(out[:, 2], math.sqrt(EPS), rtol=1e-12)


def test_mbstd_two_sample_offset_exact(rng):
    a = rng.standard_normal((1, 3, 4, 4))
    c = 0.75
    out = minibatch_stddev(np.concatenate([a, a + 2 * c])).data
    expected = math.sqrt(c * c + EPS)
    assert np.abs(out[:, 3] - expected).max() <= 1e-12
    assert abs(expected - c) < 1e-8


def test_mbstd_map_is_one_replicated_scalar(rng):
    out = minibatch_stddev(rng.standard_normal((4, 3, 5, 5))).data[:, 3]
    assert np.all(out == out.flat[0])


# ---------------------------------------------------- rgb and embeddings

def test_to_rgb_shape(rng):
    for c, r in [(8, 8), (16, 32)]:
        assert to_rgb(c, rng=rng)(rng.standard_normal((2, c, r, r))).shape == (2, 3, r, r)


def test_from_rgb_at_128_stage(rng):
    layer = from_rgb(128, rng=rng)
    assert layer(rng.standard_normal((1, 4, 128, 128))).shape == (1, 128, 128, 128)


@pytest.mark.parametrize("factory", [to_rgb, from_rgb])
def test_rgb_layer_gradcheck(factory, rng):
    layer = factory(4, rng=rng)
    x = Tensor(rng.standard_normal((2, layer.in_ch, 3, 3)), requires_grad=True)
    assert grad_check_leaves(lambda: layer(x), [x, layer.weight, layer.bias]) < 1e-4


def test_embed_label_lookup_and_gradient():
    table = Tensor(np.eye(4), requires_grad=True)
    row = embed_label(2, table)
    np.testing.assert_array_equal(row.data, [0, 0, 1, 0])
    g = grad(ops.sum(row), table).data
    expected = np.zeros((4, 4))
    expected[2] = 1
    np.testing.assert_array_equal(g, expected)


def test_embed_label_out_of_range():
    with pytest.raises(IndexError):
        embed_label(4, np.eye(4))
    with pytest.raises(IndexError):
        Embedding(3, 2)(np.array([3]))


def test_full_vocabulary_embedding_size():
    assert Embedding(165, 512).table.size == 84_480
