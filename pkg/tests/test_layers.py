import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conxnet.errors import ShapeError, StateError
from conxnet.layers import BatchNorm2D, Conv2D, Dense, Flatten, MaxPool2D, ReLU, Sigmoid, flatten, relu, sigmoid, unflatten

import oracles

F64 = np.float64


def fd_check(layer, x, rng, tol=1e-4):
    """Analytic vs central-difference gradients for loss = sum(out * r)."""
    r = rng.normal(size=layer.forward(x).shape)

    def loss():
        return float(np.sum(layer.forward(x) * r))

    layer.forward(x)
    gx = layer.backward(r.copy())
    grads = {k: v.copy() for k, v in layer.grads.items()}
    assert oracles.max_rel_error(gx, oracles.central_difference(loss, x)) <= tol
    for name, p in layer.params.items():
        assert oracles.max_rel_error(grads[name], oracles.central_difference(loss, p)) <= tol, name


# -- Conv2D -----------------------------------------------------------------


def test_conv_identity_kernel(rng):
    conv = Conv2D(1, 1, kernel=1, padding=0, dtype=F64)
    conv.params["weight"][:] = 1.0
    x = rng.normal(size=(2, 1, 5, 5))
    np.testing.assert_array_equal(conv.forward(x), x)
    g = rng.normal(size=x.shape)
    np.testing.assert_array_equal(conv.backward(g), g)


def test_conv_zero_input_gives_bias(rng):
    conv = Conv2D(2, 3, rng=rng, dtype=F64)
    conv.params["bias"][:] = [1.0, -2.0, 0.5]
    out = conv.forward(np.zeros((2, 2, 4, 4)))
    for o, b in enumerate([1.0, -2.0, 0.5]):
        assert np.all(out[:, o] == b)


def test_conv_zero_grad(rng):
    conv = Conv2D(2, 3, rng=rng, dtype=F64)
    x = rng.normal(size=(2, 2, 5, 5))
    out = conv.forward(x)
    gx = conv.backward(np.zeros_like(out))
    assert not gx.any() and not conv.grads["weight"].any() and not conv.grads["bias"].any()


def test_conv_bias_grad_is_sum(rng):
    conv = Conv2D(2, 3, rng=rng, dtype=F64)
    g = rng.normal(size=conv.forward(rng.normal(size=(2, 2, 5, 5))).shape)
    conv.backward(g)
    np.testing.assert_allclose(conv.grads["bias"], g.sum(axis=(0, 2, 3)))


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (2, 1)])
def test_conv_gradients_match_fd(rng, stride, pad):
    conv = Conv2D(3, 2, kernel=3, stride=stride, padding=pad, rng=rng, dtype=F64)
    conv.params["bias"][:] = rng.normal(size=2)
    fd_check(conv, rng.normal(size=(2, 3, 6, 6)), rng)


def test_conv_errors(rng):
    conv = Conv2D(2, 3, kernel=3, padding=0, rng=rng)
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((1, 3, 5, 5), np.float32))
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((1, 2, 2, 2), np.float32))
    with pytest.raises(StateError):
        Conv2D(1, 1).backward(np.zeros((1, 1, 1, 1)))


def test_conv_grad_shape_mismatch(rng):
    conv = Conv2D(1, 1, rng=rng, dtype=F64)
    conv.forward(np.zeros((1, 1, 4, 4)))
    with pytest.raises(ShapeError):
        conv.backward(np.zeros((1, 1, 3, 3)))


# -- BatchNorm2D ------------------------------------------------------------


def test_bn_train_normalizes(rng):
    bn = BatchNorm2D(3, dtype=F64)
    x = rng.normal(loc=4.0, scale=3.0, size=(4, 3, 5, 5))
    y = bn.forward(x)
    assert np.all(np.abs(y.mean(axis=(0, 2, 3))) <= 1e-5)
    var_b = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), var_b / (var_b + bn.eps), rtol=1e-10)


def test_bn_matches_loop_oracle(rng):
    bn = BatchNorm2D(2, dtype=F64)
    bn.params["gamma"][:] = [1.5, -0.5]
    bn.params["beta"][:] = [0.1, 2.0]
    x = rng.normal(size=(3, 2, 4, 4))
    np.testing.assert_allclose(bn.forward(x), oracles.batchnorm_train(x, [1.5, -0.5], [0.1, 2.0], bn.eps), rtol=1e-12, atol=1e-12)


def test_bn_gamma_zero_gives_beta(rng):
    bn = BatchNorm2D(2, dtype=F64)
    bn.params["gamma"][:] = 0.0
    bn.params["beta"][:] = [3.0, -1.0]
    y = bn.forward(rng.normal(size=(2, 2, 3, 3)))
    assert np.all(y[:, 0] == 3.0) and np.all(y[:, 1] == -1.0)


def test_bn_eval_identity_stats(rng):
    bn = BatchNorm2D(2, eps=1e-12, dtype=F64).eval()
    bn.params["gamma"][:] = [2.0, 0.5]
    bn.params["beta"][:] = [1.0, -1.0]
    x = rng.normal(size=(1, 2, 3, 3))
    expected = x * np.array([2.0, 0.5]).reshape(1, 2, 1, 1) + np.array([1.0, -1.0]).reshape(1, 2, 1, 1)
    np.testing.assert_allclose(bn.forward(x), expected, rtol=1e-10)


def test_bn_running_stats_update(rng):
    bn = BatchNorm2D(1, momentum=0.9, dtype=F64)
    x = rng.normal(loc=2.0, size=(4, 1, 3, 3))
    bn.forward(x)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.1 * x.mean())
    np.testing.assert_allclose(bn.buffers["running_var"], 0.9 + 0.1 * x.var())
    assert np.all(bn.buffers["running_var"] >= 0)


def test_bn_train_needs_batch_of_two():
    with pytest.raises(ShapeError):
        BatchNorm2D(1).forward(np.zeros((1, 1, 2, 2), np.float32))


def test_bn_backward_basics(rng):
    bn = BatchNorm2D(3, dtype=F64)
    with pytest.raises(StateError):
        bn.backward(np.zeros((2, 3, 2, 2)))
    y = bn.forward(rng.normal(size=(2, 3, 4, 4)))
    assert not bn.backward(np.zeros_like(y)).any()
    g = rng.normal(size=y.shape)
    bn.backward(g)
    np.testing.assert_allclose(bn.grads["beta"], g.sum(axis=(0, 2, 3)))


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_bn_gradients_match_fd(rng, mode):
    bn = BatchNorm2D(3, dtype=F64)
    bn.params["gamma"][:] = rng.uniform(0.5, 2.0, 3)
    bn.params["beta"][:] = rng.normal(size=3)
    if mode == "eval":
        bn.buffers["running_mean"][:] = rng.normal(size=3)
        bn.buffers["running_var"][:] = rng.uniform(0.5, 2, 3)
        bn.eval()
    x = rng.normal(size=(2, 3, 4, 4))
    before = {k: v.copy() for k, v in bn.buffers.items()}
    fd_check(bn, x, rng)
    if mode == "eval":
        for k in before:
            np.testing.assert_array_equal(bn.buffers[k], before[k])


# -- MaxPool2D --------------------------------------------------------------


def test_maxpool_example():
    pool = MaxPool2D()
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    np.testing.assert_array_equal(pool.forward(x), [[[[4.0]]]])
    np.testing.assert_array_equal(pool.backward(np.array([[[[7.0]]]])), [[[[0, 0], [0, 7.0]]]])


def test_maxpool_odd_extent_floors(rng):
    assert MaxPool2D().forward(rng.normal(size=(1, 1, 5, 7))).shape == (1, 1, 2, 3)


def test_maxpool_conserves_gradient(rng):
    pool = MaxPool2D()
    y = pool.forward(rng.normal(size=(2, 3, 6, 6)))
    g = rng.normal(size=y.shape)
    gx = pool.backward(g)
    np.testing.assert_allclose(gx.sum(), g.sum())
    assert np.count_nonzero(gx) == g.size


def test_maxpool_fd_tie_free(rng):
    x = rng.permutation(72).reshape(2, 1, 6, 6).astype(F64) * 0.1
    fd_check(MaxPool2D(), x, rng)


def test_maxpool_errors():
    with pytest.raises(ShapeError):
        MaxPool2D().forward(np.zeros((1, 1, 1, 4)))
    with pytest.raises(StateError):
        MaxPool2D().backward(np.zeros((1, 1, 1, 1)))


# -- Dense ------------------------------------------------------------------


def test_dense_identity(rng):
    d = Dense(3, 3, dtype=F64)
    d.params["weight"][:] = np.eye(3)
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(d.forward(x), x)


def test_dense_example():
    d = Dense(2, 1, dtype=F64)
    d.params["weight"][:] = [[1.0], [1.0]]
    d.params["bias"][:] = [3.0]
    np.testing.assert_array_equal(d.forward(np.array([[1.0, 2.0]])), [[6.0]])


def test_dense_fd(rng):
    d = Dense(5, 3, rng=rng, dtype=F64)
    d.params["bias"][:] = rng.normal(size=3)
    fd_check(d, rng.normal(size=(4, 5)), rng)


def test_dense_width_mismatch():
    with pytest.raises(ShapeError):
        Dense(3, 2).forward(np.zeros((1, 4), np.float32))


# -- activations and flatten ------------------------------------------------


def test_relu_values_and_kink():
    np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
    layer = ReLU()
    layer.forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(layer.backward(np.ones(3)), [0.0, 0.0, 1.0])


def test_sigmoid_values():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    x = np.random.default_rng(0).normal(scale=10, size=1000)
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_sigmoid_strictly_inside_unit_interval(dtype):
    y = sigmoid(np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0], dtype=dtype))
    assert np.all(y > 0) and np.all(y < 1)


def test_activation_fd(rng):
    fd_check(Sigmoid(), rng.normal(size=(3, 4)), rng)
    x = rng.normal(size=(2, 3, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5
    fd_check(ReLU(), x, rng)


def test_flatten_row_major(rng):
    x = np.arange(8.0).reshape(2, 1, 2, 2)
    np.testing.assert_array_equal(flatten(x), [[0, 1, 2, 3], [4, 5, 6, 7]])
    f = Flatten()
    y = f.forward(x)
    np.testing.assert_array_equal(f.backward(y), x)
    np.testing.assert_array_equal(unflatten(flatten(x), x.shape), x)


@settings(max_examples=30, deadline=None)
@given(shape=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5)))
def test_flatten_conserves_count(shape):
    x = np.zeros(shape)
    y = flatten(x)
    assert y.shape == (shape[0], int(np.prod(shape[1:]))) and y.size == x.size


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_activation_ranges(seed):
    x = np.random.default_rng(seed).normal(scale=20, size=50)
    assert np.all(relu(x) >= 0)
    s = sigmoid(x)
    assert np.all((s > 0) & (s < 1))
