import numpy as np
import pytest
from hypothesis import given, strategies as st

from glfnet.autodiff import Tensor, backward, grad_check, parameter
from glfnet.errors import ShapeError
from glfnet.nn import (
    Conv2dParams,
    avgpool2x2,
    concat_channels,
    conv2d,
    layernorm,
    log_softmax_channels,
    maxpool2d,
    softmax_channels,
    upsample2x,
)
from oracles import naive_conv2d, naive_maxpool


def conv(weight, bias=None, dilation=1, padding="same"):
    weight = np.asarray(weight, dtype=float)
    bias = np.zeros(weight.shape[0]) if bias is None else np.asarray(bias, dtype=float)
    return Conv2dParams(parameter(weight), parameter(bias), dilation=dilation, padding=padding)


def test_identity_1x1_conv(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    out = conv2d(Tensor(x), conv(np.eye(3)[:, :, None, None]))
    np.testing.assert_array_equal(out.data, x)


def test_all_ones_kernel_on_constant_input():
    out = conv2d(Tensor(np.ones((1, 1, 5, 5))), conv(np.ones((1, 1, 3, 3)))).data[0, 0]
    assert out[2, 2] == 9 and out[1, 3] == 9
    assert out[0, 0] == out[0, 4] == out[4, 0] == out[4, 4] == 4
    assert out[0, 2] == 6


def test_random_conv_matches_nested_loops(rng):
    x = rng.normal(size=(1, 1, 4, 4))
    w = rng.normal(size=(1, 1, 3, 3))
    np.testing.assert_allclose(conv2d(Tensor(x), conv(w)).data, naive_conv2d(x, w, [0.0]), atol=1e-12)


@given(
    st.integers(1, 2), st.integers(1, 2), st.integers(1, 2),
    st.integers(3, 8), st.integers(3, 8),
    st.sampled_from([1, 3]), st.sampled_from([1, 2, 3]),
    st.integers(0, 2**32 - 1),
)
def test_property_conv_matches_oracle(b, c_in, c_out, h, w, k, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(b, c_in, h, w))
    wt = rng.normal(size=(c_out, c_in, k, k))
    bias = rng.normal(size=c_out)
    out = conv2d(Tensor(x), conv(wt, bias, dilation=d)).data
    np.testing.assert_allclose(out, naive_conv2d(x, wt, bias, d), atol=1e-12)


def test_valid_padding_shrinks(rng):
    x = rng.normal(size=(1, 1, 6, 6))
    out = conv2d(Tensor(x), conv(rng.normal(size=(2, 1, 3, 3)), padding="valid"))
    assert out.shape == (1, 2, 4, 4)


def test_conv_errors():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 2, 4, 4))), conv(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        conv(np.ones((1, 1, 2, 2)))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_conv_gradients(d, rng):
    x = rng.normal(size=(2, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    proj = Tensor(rng.normal(size=(2, 3, 6, 6)))

    def f(xx, ww, bb):
        return (conv2d(xx, Conv2dParams(ww, bb, dilation=d)) * proj).sum()

    assert grad_check(lambda t: f(t, Tensor(w), Tensor(b)), x) < 1e-5
    assert grad_check(lambda t: f(Tensor(x), t, Tensor(b)), w) < 1e-5
    assert grad_check(lambda t: f(Tensor(x), Tensor(w), t), b) < 1e-5


def test_maxpool_examples():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None])
    assert maxpool2d(x).data.item() == 4.0


def test_maxpool_tie_routes_to_first():
    x = parameter(np.full((1, 1, 4, 4), 2.0))
    out = maxpool2d(x)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.0))
    g = backward(out.sum())[x.node_id].data[0, 0]
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(g, expected)


def test_maxpool_matches_oracle_and_rejects_odd(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    np.testing.assert_array_equal(maxpool2d(Tensor(x)).data, naive_maxpool(x))
    with pytest.raises(ShapeError):
        maxpool2d(Tensor(np.ones((1, 1, 5, 4))))


def test_maxpool_gradient(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    proj = Tensor(rng.normal(size=(1, 2, 2, 2)))
    assert grad_check(lambda t: (maxpool2d(t) * proj).sum(), x) < 1e-5


def test_maxpool_inverts_upsample(rng):
    x = rng.normal(size=(2, 2, 3, 3))
    np.testing.assert_array_equal(maxpool2d(upsample2x(Tensor(x))).data, x)


def test_maxpool_upsample_identity_on_first_max_family(rng):
    # each 2x2 block holds its maximum in the top-left slot
    x = rng.uniform(0, 1, size=(1, 2, 4, 4))
    x[..., ::2, ::2] = 2.0 + rng.uniform(size=(1, 2, 2, 2))
    pooled = maxpool2d(Tensor(x))
    np.testing.assert_array_equal(upsample2x(pooled).data[..., ::2, ::2], x[..., ::2, ::2])


def test_layernorm_examples(rng):
    x = Tensor(np.broadcast_to(rng.normal(size=(1, 1, 3, 3)), (1, 4, 3, 3)).copy())
    out = layernorm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)
    out = layernorm(Tensor(rng.normal(size=(1, 4, 3, 3))), Tensor(np.zeros(4)), Tensor(np.full(4, 5.0)))
    np.testing.assert_array_equal(out.data, 5.0)


def test_layernorm_statistics(rng):
    x = rng.normal(size=(1, 4, 2, 2))
    out = layernorm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=1e-12).data
    assert np.abs(out.mean(axis=1)).max() < 1e-10
    assert np.abs(out.var(axis=1) - 1).max() < 1e-6
    # with a visible eps the variance shrinks to var / (var + eps)
    var = x.var(axis=1)
    out = layernorm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=1e-2).data
    np.testing.assert_allclose(out.var(axis=1), var / (var + 1e-2), rtol=1e-12)


def test_layernorm_shift_invariance(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    shift = rng.normal(size=(2, 1, 4, 4))
    g, b = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
    np.testing.assert_allclose(layernorm(Tensor(x + shift), g, b).data, layernorm(Tensor(x), g, b).data, atol=1e-10)


def test_layernorm_errors_and_gradients(rng):
    x = rng.normal(size=(2, 3, 2, 2))
    with pytest.raises(ShapeError):
        layernorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    g, b = rng.normal(size=(2, 3))
    proj = Tensor(rng.normal(size=x.shape))
    assert grad_check(lambda t: (layernorm(t, Tensor(g), Tensor(b)) * proj).sum(), x) < 1e-5
    assert grad_check(lambda t: (layernorm(Tensor(x), t, Tensor(b)) * proj).sum(), g) < 1e-5
    assert grad_check(lambda t: (layernorm(Tensor(x), Tensor(g), t) * proj).sum(), b) < 1e-5


def test_upsample(rng):
    np.testing.assert_array_equal(upsample2x(Tensor(np.ones((1, 1, 1, 1)))).data, np.ones((1, 1, 2, 2)))
    x = rng.normal(size=(1, 2, 3, 4))
    np.testing.assert_allclose(avgpool2x2(upsample2x(Tensor(x))).data, x, atol=1e-15)
    proj = Tensor(rng.normal(size=(1, 2, 6, 8)))
    assert grad_check(lambda t: (upsample2x(t) * proj).sum(), x) < 1e-6


def test_concat_channels(rng):
    a, b = parameter(rng.normal(size=(2, 2, 3, 3))), parameter(rng.normal(size=(2, 3, 3, 3)))
    out = concat_channels([a, b])
    assert out.shape == (2, 5, 3, 3)
    np.testing.assert_array_equal(out.data[:, :2], a.data)
    grads = backward(out.sum())
    np.testing.assert_array_equal(grads[a.node_id].data, np.ones(a.shape))
    np.testing.assert_array_equal(grads[b.node_id].data, np.ones(b.shape))
    with pytest.raises(ShapeError):
        concat_channels([a, Tensor(np.ones((2, 1, 4, 3)))])


def test_softmax(rng):
    np.testing.assert_allclose(softmax_channels(Tensor(np.zeros((1, 3, 2, 2)))).data, 1 / 3)
    x = rng.normal(size=(2, 4, 3, 3))
    np.testing.assert_allclose(softmax_channels(Tensor(x + 7.5)).data, softmax_channels(Tensor(x)).data, atol=1e-15)
    assert np.abs(softmax_channels(Tensor(x * 50)).data.sum(axis=1) - 1).max() < 1e-12
    np.testing.assert_allclose(
        np.exp(log_softmax_channels(Tensor(x)).data), softmax_channels(Tensor(x)).data, atol=1e-14
    )
    proj = Tensor(rng.normal(size=x.shape))
    assert grad_check(lambda t: (softmax_channels(t) * proj).sum(), x) < 1e-5
    assert grad_check(lambda t: (log_softmax_channels(t) * proj).sum(), x) < 1e-5


def test_avgpool_gradient(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    proj = Tensor(rng.normal(size=(1, 2, 2, 2)))
    assert grad_check(lambda t: (avgpool2x2(t) * proj).sum(), x) < 1e-5
