from __future__ import annotations

import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import central_difference, gradcheck_cases, naive_conv, naive_conv_transposed, relative_error

from nldetect.errors import ChecksumError, ConfigError, ContractError, DomainError, FileFormatError, VersionMismatchError
from nldetect.neuralnet import (
    LOG_CLAMP,
    ConvLayerSpec,
    DenseLayerSpec,
    DropoutSpec,
    FlattenSpec,
    Network,
    OptimizerState,
    PoolSpec,
    activation,
    adam_step,
    backward,
    conv1d_forward,
    conv1d_transposed_forward,
    dense_forward,
    dropout,
    gan_losses,
    l2_penalty,
    load_networks,
    mae_loss,
    maxpool1d,
    save_networks,
)
from nldetect.neuralnet.layers import conv1d_linear, conv1d_transposed_linear, maxpool1d_backward
from nldetect.neuralnet.losses import d_loss_grads, d_loss_logit_grads, g_loss_logit_grad

conv_shapes = st.tuples(
    st.integers(1, 3),  # batch
    st.integers(1, 3),  # in channels
    st.integers(1, 3),  # filters
    st.integers(1, 7),  # kernel
    st.integers(1, 3),  # stride
    st.integers(1, 16),  # length
    st.integers(0, 2**32 - 1),
)


# --------------------------------------------------------------------------
# convolution


def test_conv_identity_kernel():
    y = conv1d_forward(np.array([[1.0, 2, 3, 4]]), ConvLayerSpec(1, 1, activation="linear"),
                       np.ones((1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(y, [[1, 2, 3, 4]])


def test_conv_difference_kernel():
    y = conv1d_forward(np.array([[1.0, 2, 3, 4]]), ConvLayerSpec(3, 1, activation="linear"),
                       np.array([[[1.0, 0.0, -1.0]]]), np.zeros(1))
    np.testing.assert_array_equal(y, [[-2, -2, -2, 3]])


def test_conv_stride_length():
    spec = ConvLayerSpec(6, 2, 2, activation="linear")
    y = conv1d_forward(np.zeros((1, 500)), spec, np.zeros((2, 1, 6)), np.zeros(2))
    assert y.shape == (2, 250)


def test_transposed_lengths_and_identity():
    spec = ConvLayerSpec(6, 1, 2, transposed=True, activation="linear")
    y = conv1d_transposed_forward(np.zeros((3, 250)), spec, np.zeros((3, 1, 6)), np.zeros(1))
    assert y.shape == (1, 500)
    x = np.random.default_rng(0).standard_normal((1, 9))
    same = conv1d_transposed_forward(x, ConvLayerSpec(1, 1, 1, transposed=True, activation="linear"),
                                     np.ones((1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(same, x)


@given(conv_shapes)
def test_conv_matches_naive(shape):
    b, c, f, k, s, length, seed = shape
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((b, c, length))
    w = gen.standard_normal((f, c, k))
    bias = gen.standard_normal(f)
    y, _ = conv1d_linear(x, w, bias, s)
    assert np.max(np.abs(y - naive_conv(x, w, bias, s))) <= 1e-12 * max(1.0, np.abs(y).max())


@given(conv_shapes)
def test_transposed_matches_naive(shape):
    b, f, c, k, s, length, seed = shape
    gen = np.random.default_rng(seed)
    u = gen.standard_normal((b, f, length))
    w = gen.standard_normal((f, c, k))
    bias = gen.standard_normal(c)
    y = conv1d_transposed_linear(u, w, bias, s)
    assert np.max(np.abs(y - naive_conv_transposed(u, w, bias, s))) <= 1e-12 * max(1.0, np.abs(y).max())


@given(conv_shapes)
def test_transposed_is_adjoint(shape):
    b, c, f, k, s, length, seed = shape
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((b, c, length * s))
    w = gen.standard_normal((f, c, k))
    y, _ = conv1d_linear(x, w, None, s)
    u = gen.standard_normal(y.shape)
    lhs = np.sum(y * u)
    rhs = np.sum(x * conv1d_transposed_linear(u, w, None, s))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.sum(np.abs(y * u)))


def test_float32_compute_close_to_float64():
    gen = np.random.default_rng(3)
    x = gen.standard_normal((2, 3, 40))
    w = gen.standard_normal((4, 3, 5))
    y64, _ = conv1d_linear(x, w, None, 2)
    y32, _ = conv1d_linear(x.astype(np.float32), w.astype(np.float32), None, 2)
    assert y32.dtype == np.float32
    np.testing.assert_allclose(y32, y64, rtol=1e-4, atol=1e-4)


# --------------------------------------------------------------------------
# activations, pooling, dense, dropout


def test_activation_examples():
    assert activation(np.array(2.0), "leaky_relu", 0.2) == 2.0
    assert activation(np.array(-1.0), "leaky_relu", 0.2) == pytest.approx(-0.2)
    assert activation(np.array(0.0), "sigmoid") == 0.5
    assert abs(activation(np.array(20.0), "sigmoid") - 1) < 1e-8
    assert abs(activation(np.array(-20.0), "sigmoid")) < 1e-8
    with pytest.raises(ConfigError):
        activation(np.zeros(2), "tanh")


def test_maxpool_examples():
    y, _ = maxpool1d(np.array([[1.0, 3, 2, 5]]), 2)
    np.testing.assert_array_equal(y, [[3, 5]])
    x = np.array([[4.0, -1, 2]])
    np.testing.assert_array_equal(maxpool1d(x, 1)[0], x)
    np.testing.assert_array_equal(maxpool1d(np.array([[-3.0, -1]]), 2)[0], [[-1]])


@given(st.integers(1, 5), st.integers(1, 23), st.integers(0, 2**32 - 1))
def test_maxpool_backward_routes_to_argmax(width, length, seed):
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((2, 3, length))
    y, idx = maxpool1d(x, width)
    g = gen.standard_normal(y.shape)
    dx = maxpool1d_backward(g, idx, width, length)
    assert dx.shape == x.shape
    assert np.sum(dx) == pytest.approx(np.sum(g), rel=1e-12, abs=1e-12)
    nz = dx != 0
    np.testing.assert_array_equal(np.count_nonzero(nz, axis=-1), np.count_nonzero(g, axis=-1))
    for b, c, pos in zip(*np.nonzero(nz)):
        block = pos // width
        assert x[b, c, pos] == y[b, c, block]


def test_dense_examples():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(dense_forward(x, np.eye(3), np.zeros(3)), x)
    np.testing.assert_array_equal(dense_forward(x, np.zeros((2, 3)), np.full(2, 4.0)), [4.0, 4.0])
    gen = np.random.default_rng(1)
    w, b, v = gen.standard_normal((3, 3)), gen.standard_normal(3), gen.standard_normal(3)
    manual = [sum(w[i, j] * v[j] for j in range(3)) + b[i] for i in range(3)]
    assert np.max(np.abs(dense_forward(v, w, b) - manual)) <= 1e-12


def test_dropout_examples():
    x = np.random.default_rng(0).standard_normal((4, 50))
    np.testing.assert_array_equal(dropout(x, 0.0, True, 1), x)
    np.testing.assert_array_equal(dropout(x, 0.7, False, 1), x)
    ones = np.ones(100_000)
    y = dropout(ones, 0.5, True, seed=3)
    assert 0.49 <= np.mean(y == 0) <= 0.51
    assert y.mean() == pytest.approx(1.0, rel=0.02)
    np.testing.assert_array_equal(dropout(x, 0.3, True, 5), dropout(x, 0.3, True, 5))
    with pytest.raises(DomainError):
        dropout(x, 1.0, True, 0)


# --------------------------------------------------------------------------
# losses and optimiser


def test_mae_examples():
    x = np.random.default_rng(0).random(10)
    assert mae_loss(x, x) == 0
    assert mae_loss([0.0, 0.0], [1.0, 3.0]) == 2.0


@given(st.floats(-100, 100), st.integers(0, 2**32 - 1))
def test_mae_homogeneous(c, seed):
    gen = np.random.default_rng(seed)
    a, b = gen.standard_normal((2, 20))
    assert mae_loss(c * a, c * b) == pytest.approx(abs(c) * mae_loss(a, b), rel=1e-12, abs=1e-300)


def test_l2_examples():
    assert l2_penalty([np.array([3.0, 4.0])], 0.0)[0] == 0
    assert l2_penalty([np.array([3.0, 4.0])], 1.0)[0] == 25.0
    np.testing.assert_array_equal(l2_penalty([np.array([3.0, 4.0])], 0.5)[1][0], [3.0, 4.0])


def test_gan_loss_examples():
    d, _ = gan_losses([1 - LOG_CLAMP], [LOG_CLAMP])
    assert d == pytest.approx(0.0, abs=1e-6)
    d, g = gan_losses([0.5], [0.5])
    assert d == pytest.approx(2 * math.log(2))
    assert g == pytest.approx(-math.log(2))


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8), st.lists(st.floats(0.01, 0.99), min_size=1,
                                                                             max_size=8))
def test_gan_loss_swap_symmetry(a, b):
    a, b = np.array(a), np.array(b)
    assert gan_losses(a, b)[0] == pytest.approx(gan_losses(1 - b, 1 - a)[0], rel=1e-12)


def _softplus_d_loss(zr, zf):
    # -mean log sigmoid(zr) - mean log(1 - sigmoid(zf)), without clamping
    return np.logaddexp(0, -zr).mean() + np.logaddexp(0, zf).mean()


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=6), st.lists(st.floats(-30, 30), min_size=1, max_size=6))
def test_logit_grads_match_unclamped_loss(zr, zf):
    zr, zf = np.array(zr), np.array(zf)
    gr, gf = d_loss_logit_grads(zr, zf)
    h = 1e-6
    for z, g, which in ((zr, gr, 0), (zf, gf, 1)):
        for i in range(len(z)):
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            args_p = (zp, zf) if which == 0 else (zr, zp)
            args_m = (zm, zf) if which == 0 else (zr, zm)
            fd = (_softplus_d_loss(*args_p) - _softplus_d_loss(*args_m)) / (2 * h)
            assert g[i] == pytest.approx(fd, abs=1e-7)


def test_logit_grads_survive_saturation():
    # a confidently wrong discriminator: clamped probability gradients vanish, logit ones do not
    zr, zf = np.array([-40.0]), np.array([40.0])
    p = 1 / (1 + np.exp(-np.concatenate((zr, zf))))
    assert all(np.all(g == 0) for g in d_loss_grads(p[:1], p[1:]))
    gr, gf = d_loss_logit_grads(zr, zf)
    assert gr[0] == pytest.approx(-1.0) and gf[0] == pytest.approx(1.0)
    assert g_loss_logit_grad([-40.0], non_saturating=True)[0] == pytest.approx(-1.0)
    assert g_loss_logit_grad([40.0])[0] == pytest.approx(-1.0)


def test_backward_from_logits_skips_output_activation():
    net = Network([DenseLayerSpec(3, "sigmoid")], (4,), seed=0)
    x = np.random.default_rng(0).standard_normal((2, 4))
    y = net.forward(x)
    np.testing.assert_allclose(y, 1 / (1 + np.exp(-net.logits)), rtol=1e-12)
    g = np.ones_like(y)
    via_logits = net.backward(g * y * (1 - y), from_logits=True)
    np.testing.assert_allclose(via_logits, net.backward(g), rtol=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_clamp_keeps_ordering(p, q):
    la, _ = gan_losses([p], [0.5])
    lb, _ = gan_losses([q], [0.5])
    if p < q:
        assert la >= lb


def test_adam_first_step():
    theta = [np.array([1.0])]
    st_ = OptimizerState(lr=1e-3)
    adam_step(theta, [np.array([0.5])], st_)
    assert st_.m[0][0] == pytest.approx(0.05)
    assert st_.v[0][0] == pytest.approx(2.5e-4)
    assert theta[0][0] == pytest.approx(1 - 1e-3 * 0.5 / (0.5 + 1e-8), rel=1e-12)
    assert theta[0][0] == pytest.approx(0.9990, abs=1e-4)


def test_adam_zero_gradient():
    theta = [np.array([1.0, -2.0])]
    adam_step(theta, [np.zeros(2)], OptimizerState())
    np.testing.assert_array_equal(theta[0], [1.0, -2.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), st.floats(1e-5, 1e-1))
def test_adam_first_step_bound(grads, lr):
    g = np.array(grads)
    theta = np.zeros_like(g)
    adam_step([theta], [g], OptimizerState(lr=lr))
    assert np.all(np.abs(theta) <= lr * (1 + 1e-6))


# --------------------------------------------------------------------------
# networks and back-propagation


@pytest.mark.parametrize("case", gradcheck_cases(), ids=lambda c: c[0])
def test_gradients_match_finite_differences(case):
    _, loss, analytic, params = case
    a = analytic()
    n = central_difference(loss, params)
    assert relative_error(a, n) < 1e-4


def _small_net(seed=0):
    specs = [ConvLayerSpec(3, 2, 2), PoolSpec(2), DropoutSpec(0.2), FlattenSpec(), DenseLayerSpec(3, "sigmoid")]
    return Network(specs, (1, 16), seed=seed)


def test_zero_upstream_gives_zero_gradients():
    net = _small_net()
    x = np.random.default_rng(0).standard_normal((2, 1, 16))
    backward(net, x, np.zeros((2, 3)))
    assert all(np.all(g == 0) for g in net.grads())


def test_input_only_backward():
    net = Network([ConvLayerSpec(3, 2, 2), ConvLayerSpec(3, 1, 2, transposed=True), FlattenSpec(),
                   DenseLayerSpec(4), DenseLayerSpec(1, "sigmoid")], (1, 12), seed=4)
    gen = np.random.default_rng(5)
    x, up = gen.standard_normal((3, 1, 12)), gen.standard_normal((3, 1))
    net.forward(x)
    full = net.backward(up)
    assert any(np.any(g != 0) for g in net.grads())
    net.forward(x)
    np.testing.assert_array_equal(net.backward(up, param_grads=False), full)
    assert all(np.all(g == 0) for g in net.grads())


def test_duplicated_inputs_double_sum_gradients():
    net = _small_net()
    x = np.random.default_rng(1).standard_normal((1, 1, 16))
    up = np.random.default_rng(2).standard_normal((1, 3))
    backward(net, x, up)
    single = [g.copy() for g in net.grads()]
    backward(net, np.concatenate((x, x)), np.concatenate((up, up)))
    for a, b in zip(net.grads(), single):
        np.testing.assert_allclose(a, 2 * b, rtol=1e-12, atol=1e-15)


def test_forward_deterministic_and_contracts():
    net = _small_net()
    x = np.random.default_rng(3).standard_normal((4, 1, 16))
    assert net.forward(x).tobytes() == net.forward(x).tobytes()
    with pytest.raises(ContractError):
        net.forward(np.zeros((1, 2, 16)))
    with pytest.raises(ContractError):
        Network([DenseLayerSpec(2)], (3,)).backward(np.zeros((1, 2)))


def test_network_config_errors():
    with pytest.raises(ConfigError):
        ConvLayerSpec(0, 1)
    with pytest.raises(ConfigError):
        Network([DenseLayerSpec(2)], (3,), dtype="int32")


def test_float32_network():
    net = Network([ConvLayerSpec(3, 2), FlattenSpec(), DenseLayerSpec(1, "sigmoid")], (1, 8), dtype="float32")
    y = net.forward(np.random.default_rng(0).random((2, 1, 8)))
    assert y.dtype == np.float32
    assert all(p.dtype == np.float32 for p in net.params())


# --------------------------------------------------------------------------
# persistence


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "m.nlnn"
    save_networks(path, [_small_net(0), _small_net(1)], {"kind": "test"})
    return path


def test_model_roundtrip(model_file):
    nets, meta = load_networks(model_file)
    assert meta == {"kind": "test"}
    for net, ref in zip(nets, (_small_net(0), _small_net(1))):
        assert net.checksum() == ref.checksum()
        assert net.specs == ref.specs


def test_model_truncated_and_corrupt(model_file):
    data = model_file.read_bytes()
    model_file.write_bytes(data[:-50])
    with pytest.raises(FileFormatError):
        load_networks(model_file)
    bad = bytearray(data)
    bad[-20] ^= 1
    model_file.write_bytes(bytes(bad))
    with pytest.raises(ChecksumError):
        load_networks(model_file)
    model_file.write_bytes(b"NLDS" + data[4:])
    with pytest.raises(FileFormatError):
        load_networks(model_file)
    model_file.write_bytes(data[:4] + struct.pack("<I", 2) + data[8:])
    with pytest.raises(VersionMismatchError):
        load_networks(model_file)
