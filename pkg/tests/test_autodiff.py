import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import adam_scalar, central_difference, conv_loop, dense_loop, softmax_ce_scalar
from pqforge import autodiff as ad
from pqforge import nn
from pqforge.autodiff import AdamState, Parameter, Tensor, adam_step, make_node
from pqforge.errors import ConfigError, DataError, ShapeError, StateError


def test_square_gradient():
    x = Parameter(np.array(3.0), dtype=np.float64)
    ad.square(x).backward()
    assert x.grad == 6.0


def test_disconnected_parameter_gets_no_gradient():
    x = Parameter(np.array(2.0), name="x")
    y = Parameter(np.array(5.0), name="y")
    (x * 4.0).backward()
    assert y.grad is None or y.grad == 0


def test_backward_twice_is_an_error():
    x = Parameter(np.array(2.0))
    loss = x * x
    loss.backward()
    with pytest.raises(StateError):
        loss.backward()


def test_gradients_accumulate_across_uses():
    x = Parameter(np.array(2.0), dtype=np.float64)
    (x * x + x * 3.0).backward()
    assert x.grad == 7.0


def test_make_node_custom_rule():
    x = Parameter(np.array([1.0, -2.0]), dtype=np.float64)
    y = make_node(np.round(x.data), (x,), lambda g: (g * 2.0,))
    ad.sum_(y).backward()
    assert x.grad.tolist() == [2.0, 2.0]


def test_broadcast_gradient_sums():
    b = Parameter(np.zeros(3), dtype=np.float64)
    x = Tensor(np.ones((4, 3)), dtype=np.float64)
    ad.sum_(x + b).backward()
    assert b.grad.tolist() == [4.0, 4.0, 4.0]


def test_default_dtype_context():
    assert ad.get_default_dtype() is np.float32
    with ad.default_dtype(np.float64):
        assert ad.as_tensor(1.0).dtype == np.float64
    assert ad.as_tensor(1.0).dtype == np.float32
    assert Parameter(np.zeros(2)).dtype == np.float64  # float arrays keep their dtype


def test_named_streams_are_independent_and_repeatable():
    a = ad.make_rng(0, "a").normal(size=5)
    assert np.array_equal(a, ad.make_rng(0, "a").normal(size=5))
    assert not np.array_equal(a, ad.make_rng(0, "b").normal(size=5))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-2, 2)))
def test_elementwise_gradients_match_finite_differences(x0):
    x = Parameter(x0.copy(), dtype=np.float64)

    def f():
        t = Tensor(x.data)
        return float((ad.tanh(t) * ad.sigmoid(t) + ad.exp(t * 0.3) + ad.square(t)).sum().data)

    loss = (ad.tanh(x) * ad.sigmoid(x) + ad.exp(x * 0.3) + ad.square(x)).sum()
    loss.backward()
    num = central_difference(f, x.data)
    assert np.allclose(x.grad, num, rtol=1e-6, atol=1e-8)


def test_matmul_and_reductions_match_finite_differences(rng, f64):
    A = Parameter(rng.normal(size=(3, 4)))
    B = Parameter(rng.normal(size=(4, 2)))

    def f():
        return float(ad.mean(ad.square(ad.matmul(Tensor(A.data), Tensor(B.data))), axis=0).sum().data)

    ad.mean(ad.square(ad.matmul(A, B)), axis=0).sum().backward()
    assert np.allclose(A.grad, central_difference(f, A.data), rtol=1e-6)
    assert np.allclose(B.grad, central_difference(f, B.data), rtol=1e-6)


def test_dense_identity_example():
    y = nn.dense_forward(Tensor(np.eye(2)), Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])), Tensor(np.zeros(2)))
    assert y.data.tolist() == [[1, 2], [3, 4]]


def test_dense_zero_input_gives_bias():
    y = nn.dense_forward(Tensor(np.zeros((2, 3))), Tensor(np.ones((3, 2))), Tensor(np.array([0.5, -1.0])))
    assert y.data.tolist() == [[0.5, -1.0], [0.5, -1.0]]


def test_dense_matches_loop(rng, f64):
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    y = nn.dense_forward(Tensor(x), Tensor(W), Tensor(b)).data
    assert np.allclose(y, dense_loop(x, W, b), rtol=1e-6)


def test_dense_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)|\(4, 2\).*\(2, 3\)"):
        nn.dense_forward(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv_matches_loop(rng, f64, stride, padding):
    x, W, b = rng.normal(size=(2, 3, 6, 5)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    y = nn.conv2d_forward(Tensor(x), Tensor(W), Tensor(b), stride, padding).data
    assert np.allclose(y, conv_loop(x, W, b, stride, padding), rtol=1e-9)


def test_conv_gradient(rng, f64):
    x = Parameter(rng.normal(size=(1, 2, 5, 5)))
    W = Parameter(rng.normal(size=(3, 2, 3, 3)))

    def f():
        return float(ad.square(nn.conv2d_forward(Tensor(x.data), Tensor(W.data), None, 1, 1)).sum().data)

    ad.square(nn.conv2d_forward(x, W, None, 1, 1)).sum().backward()
    assert np.allclose(W.grad, central_difference(f, W.data), rtol=1e-5)
    assert np.allclose(x.grad, central_difference(f, x.data), rtol=1e-5)


def test_activations():
    x = Tensor(np.array([-1.0, 2.0, 3.0, -3.0]))
    assert nn.activation_forward(x, "relu").data.tolist() == [0, 2, 3, 0]
    assert nn.activation_forward(x, "hard_tanh").data.tolist() == [-1, 1, 1, -1]
    assert nn.activation_forward(x, "linear").data.tolist() == x.data.tolist()
    assert abs(float(nn.activation_forward(Tensor(np.array([0.5])), "tanh").data[0]) - math.tanh(0.5)) < 1e-6
    with pytest.raises(ConfigError):
        nn.activation_forward(x, "swish")


def test_softmax_ce_examples(rng, f64):
    assert abs(float(nn.softmax_ce_loss(Tensor(np.zeros((4, 5))), np.arange(4)).data) - math.log(5)) < 1e-12
    big = np.full((1, 5), -50.0)
    big[0, 2] = 50.0
    assert float(nn.softmax_ce_loss(Tensor(big), [2]).data) < 1e-12
    logits = rng.normal(size=(6, 5))
    labels = rng.integers(0, 5, size=6)
    assert abs(float(nn.softmax_ce_loss(Tensor(logits), labels).data) - softmax_ce_scalar(logits, labels)) < 1e-12
    with pytest.raises(DataError):
        nn.softmax_ce_loss(Tensor(logits), np.full(6, 5))


def test_batchnorm_training_and_eval(f64):
    gamma, beta = Parameter(np.ones(2)), Parameter(np.zeros(2))
    mean, var = np.zeros(2), np.ones(2)
    x = Tensor(np.array([[3.0, 1.0], [3.0, 2.0], [3.0, 3.0]]))
    y = nn.batchnorm_forward(x, gamma, beta, mean, var, training=True)
    assert np.allclose(y.data[:, 0], 0.0, atol=1e-6)
    z = nn.batchnorm_forward(Tensor(np.array([[0.7, -0.2]])), gamma, beta, np.zeros(2), np.ones(2), training=False)
    assert np.allclose(z.data, [[0.7, -0.2]], atol=1e-4)
    with pytest.raises(ShapeError):
        nn.batchnorm_forward(Tensor(np.ones((1, 2))), gamma, beta, mean, var, training=True)


def test_adam_first_step():
    p = Parameter(np.array([0.0]), dtype=np.float64)
    p.grad = np.array([1.0])
    adam_step([p], AdamState(lr=1e-3))
    assert abs(p.data[0] + 1e-3) < 1e-9
    assert p.grad is None or np.all(p.grad == 0)


def test_adam_zero_gradient_is_a_no_op():
    p = Parameter(np.array([0.5, -0.5]), dtype=np.float64)
    p.grad = np.zeros(2)
    adam_step([p], AdamState())
    assert p.data.tolist() == [0.5, -0.5]


def test_adam_missing_gradient():
    with pytest.raises(StateError):
        adam_step([Parameter(np.zeros(2), name="w")], AdamState())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(-1, 1), st.floats(0, 0.1))
def test_adam_matches_scalar_recurrence(grads, theta0, wd):
    p = Parameter(np.array([theta0]), dtype=np.float64)
    state = AdamState(lr=1e-2, weight_decay=wd)
    ours = []
    for g in grads:
        p.grad = np.array([g])
        adam_step([p], state)
        ours.append(float(p.data[0]))
    assert np.allclose(ours, adam_scalar(theta0, grads, lr=1e-2, weight_decay=wd), rtol=1e-12, atol=1e-15)


def test_adam_skips_frozen_parameters():
    p = Parameter(np.array([1.0]), trainable=False)
    adam_step([p], AdamState())
    assert p.data[0] == 1.0
