import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dannr.nn import (ConfigError, DenseLayer, SchemaError, Tape, TapeStateError, backward, dense_forward,
                      grad_reverse, init_dense, sigmoid)

from helpers import central_differences, max_rel_error


def test_identity_layer_passes_input_through():
    layer = DenseLayer(np.eye(2), np.zeros(2), "identity")
    np.testing.assert_array_equal(dense_forward(layer, [3.0, -1.0]), [3.0, -1.0])


@pytest.mark.parametrize("x", [-50.0, 0.0, 2.5, 1e6])
def test_zero_sigmoid_layer_gives_half(x):
    layer = DenseLayer([[0.0]], [0.0], "sigmoid")
    assert dense_forward(layer, [x])[0] == 0.5


def test_sigmoid_layer_against_mpmath():
    layer = DenseLayer([[1.0, 1.0]], [-1.0], "sigmoid")
    expected = float(1 / (1 + mpmath.exp(-1)))
    assert dense_forward(layer, [1.0, 1.0])[0] == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.7310585786, abs=1e-10)


def test_dense_forward_rejects_wrong_width():
    layer = DenseLayer(np.eye(2), np.zeros(2), "identity")
    with pytest.raises(SchemaError):
        dense_forward(layer, [1.0, 2.0, 3.0])


def test_dense_forward_records_on_tape():
    tape = Tape()
    layer = DenseLayer(np.eye(2), np.zeros(2), "identity")
    node = dense_forward(layer, [1.0, 2.0], tape)
    assert len(tape) == 1
    np.testing.assert_array_equal(node.value, [[1.0, 2.0]])


def test_grad_reverse_forward_is_identity():
    x = np.array([0.2, 0.7])
    assert grad_reverse(x, 1.0) is x
    tape = Tape()
    node = grad_reverse(tape.input(x), 1.0, tape)
    np.testing.assert_array_equal(node.value, [x])


@pytest.mark.parametrize("lam,seed,expected", [
    (0.5, [1.0, -2.0], [-0.5, 1.0]),
    (0.0, [3.0, -7.0], [0.0, 0.0]),
])
def test_grad_reverse_backward_scales_adjoint(lam, seed, expected):
    tape = Tape()
    x = tape.input([0.2, 0.7])
    out = tape.grad_reverse(x, lam)
    tape.backward(out, np.array(seed))
    np.testing.assert_array_equal(tape.adjoint(x)[0], expected)


def test_grad_reverse_rejects_negative_lambda():
    with pytest.raises(ConfigError):
        grad_reverse(np.zeros(2), -0.1)
    with pytest.raises(ConfigError):
        Tape().grad_reverse(np.zeros(2), -1.0)


def test_backward_before_forward_is_an_error():
    tape = Tape()
    node = tape.input([1.0])
    with pytest.raises(TapeStateError):
        backward(tape, node)


def test_single_identity_layer_hand_derivative():
    layer = DenseLayer([[1.0]], [0.0], "identity", "a")
    tape = Tape()
    out = tape.dense(layer, [1.0])
    loss = tape.squared_error(out, [0.0], normalizer=1)  # output^2
    grads = backward(tape, loss)
    assert grads["a.weight"][0, 0] == 2.0


def _random_net(rng, widths):
    layers = [init_dense(a, b, "sigmoid", f"l{i}", rng) for i, (a, b) in enumerate(zip(widths, widths[1:]))]
    layers.append(init_dense(widths[-1], 1, "identity", "out", rng))
    return layers


@pytest.mark.parametrize("seed", range(5))
def test_three_layer_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    layers = _random_net(rng, [3, 5, 4])
    X, y = rng.normal(size=(6, 3)), rng.normal(size=6)

    def loss_value(tape=None):
        tape = tape or Tape()
        h = tape.input(X)
        for layer in layers:
            h = tape.dense(layer, h)
        return tape, tape.squared_error(h, y.reshape(-1, 1))

    tape, loss = loss_value()
    analytic = tape.backward(loss)
    params = {k: v for layer in layers for k, v in layer.parameters().items()}
    numeric = central_differences(lambda: float(loss_value()[1].value), params)
    assert max_rel_error(analytic, numeric) < 1e-4


def test_reversal_negates_upstream_gradients():
    rng = np.random.default_rng(3)
    first = init_dense(2, 3, "sigmoid", "first", rng)
    second = init_dense(3, 1, "sigmoid", "second", rng)
    X = rng.normal(size=(4, 2))

    def grads(reverse):
        tape = Tape()
        h = tape.dense(first, X)
        if reverse:
            h = tape.grad_reverse(h, 1.0)
        p = tape.dense(second, h)
        return tape.backward(tape.cross_entropy(p, 1))

    plain, rev = grads(False), grads(True)
    np.testing.assert_array_equal(rev["first.weight"], -plain["first.weight"])
    np.testing.assert_array_equal(rev["first.bias"], -plain["first.bias"])
    np.testing.assert_array_equal(rev["second.weight"], plain["second.weight"])


def test_two_backward_passes_agree_bitwise():
    rng = np.random.default_rng(0)
    layers = _random_net(rng, [2, 4])
    tape = Tape()
    h = tape.input(rng.normal(size=(5, 2)))
    for layer in layers:
        h = tape.dense(layer, h)
    loss = tape.squared_error(h, np.ones((5, 1)))
    a, b = tape.backward(loss), tape.backward(loss)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_reset_clears_tape():
    tape = Tape()
    tape.dense(DenseLayer([[1.0]], [0.0], "identity"), [1.0])
    tape.reset()
    assert len(tape) == 0


def test_cross_entropy_clamps_saturated_probabilities():
    tape = Tape()
    layer = DenseLayer([[1000.0]], [0.0], "sigmoid", "d")
    p = tape.dense(layer, [[1.0]])
    loss = tape.cross_entropy(p, 0)
    assert np.isfinite(loss.value)
    assert loss.value == pytest.approx(-np.log(1e-7), rel=1e-6)
    grads = tape.backward(loss)
    assert np.all(np.isfinite(grads["d.weight"]))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e300, 1e300)))
def test_sigmoid_is_finite_and_in_unit_interval(z):
    s = sigmoid(z)
    assert np.all(np.isfinite(s))
    assert np.all((s >= 0) & (s <= 1))
    small = np.abs(z) < 30
    assert np.all((s[small] > 0) & (s[small] < 1))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)), st.integers(0, 2**32 - 1))
def test_sigmoid_layer_outputs_strictly_inside_unit_interval(X, seed):
    layer = init_dense(4, 5, "sigmoid", "h", np.random.default_rng(seed))
    out = dense_forward(layer, X)
    assert np.all((out > 0) & (out < 1))


def test_init_is_seeded_and_bounded():
    a = init_dense(16, 8, "sigmoid", "h", np.random.default_rng(7))
    b = init_dense(16, 8, "sigmoid", "h", np.random.default_rng(7))
    np.testing.assert_array_equal(a.weights, b.weights)
    assert np.all(np.abs(a.weights) <= 0.25) and np.all(np.abs(a.bias) <= 0.25)
