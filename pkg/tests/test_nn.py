import math
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bads.errors import ShapeError, ValidationError
from bads.nn import (
    ModelParams,
    backward,
    forward,
    gaussian_noise,
    init_mlp,
    per_example_losses,
    predict,
    rng_stream,
)
from helpers import central_diff, rel_err


def _random_net(rng, loss, activation, depth):
    d_in = int(rng.integers(1, 5))
    hidden = [int(rng.integers(2, 6)) for _ in range(depth)]
    out = 1 if loss in ("logistic", "squared") else int(rng.integers(2, 5))
    p = init_mlp([d_in, *hidden, out], rng, activation, loss)
    # nonzero biases so every path is exercised
    p = p.map(lambda a: a + 0.1 * rng.standard_normal(a.shape))
    n = int(rng.integers(1, 7))
    x = rng.standard_normal((n, d_in))
    if loss == "squared":
        y = rng.standard_normal(n)
    else:
        y = rng.integers(0, p.num_classes, n)
    w = rng.uniform(0.0, 2.0, n)
    return p, x, y, w


def _objective(p, x, y, w):
    return float(np.mean(w * per_example_losses(forward(p, x), y)))


# forward ------------------------------------------------------------------


def test_identity_layer():
    p = ModelParams([np.eye(2)], [np.zeros(2)])
    assert forward(p, np.array([[1.0, 2.0]])).logits.tolist() == [[1.0, 2.0]]


def test_zero_network_gives_zero_logits(rng):
    p = init_mlp([3, 5, 4], rng).map(np.zeros_like)
    assert np.all(forward(p, rng.standard_normal((7, 3))).logits == 0.0)


def test_pinned_two_layer_forward():
    # logits computed once by a pure-python loop over the same parameters
    p = init_mlp([3, 4, 2], rng_stream(0, "fixture"), "tanh", "softmax")
    x = np.array([[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]])
    expected = np.array([
        [0.13420206767169296, 2.6735119822527813],
        [0.2403599305976919, -0.6846906557426462],
    ])
    np.testing.assert_allclose(forward(p, x).logits, expected, rtol=0, atol=1e-14)


def test_forward_shape_error_names_layer(rng):
    p = init_mlp([3, 4, 2], rng)
    with pytest.raises(ShapeError, match="layer 0"):
        forward(p, np.zeros((2, 5)))
    with pytest.raises(ShapeError):
        forward(p, np.zeros(3))


def test_embedding_is_last_hidden_activation(rng):
    p = init_mlp([3, 4, 5, 2], rng)
    tr = forward(p, rng.standard_normal((6, 3)))
    assert tr.embedding.shape == (6, 5)
    assert tr.embedding is tr.post[1]
    lin = init_mlp([3, 2], rng)
    x = rng.standard_normal((2, 3))
    assert forward(lin, x).embedding is not None
    np.testing.assert_array_equal(forward(lin, x).embedding, x)


# params -------------------------------------------------------------------


def test_params_validation():
    with pytest.raises(ShapeError):
        ModelParams([np.zeros((2, 3))], [np.zeros(2)])
    with pytest.raises(ShapeError):
        ModelParams([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)], ("relu",))
    with pytest.raises(ValidationError):
        ModelParams([np.zeros((2, 3)), np.zeros((3, 1))], [np.zeros(3), np.zeros(1)], ("gelu",))
    with pytest.raises(ValidationError):
        ModelParams([np.zeros((2, 3))], [np.zeros(3)], (), "hinge")
    with pytest.raises(ShapeError):
        ModelParams([np.zeros((2, 3))], [np.zeros(3)], (), "logistic")


def test_he_init_scale():
    p = init_mlp([400, 300, 2], rng_stream(1, "init"))
    assert abs(p.weights[0].std() - math.sqrt(2 / 400)) < 0.02 * math.sqrt(2 / 400)
    assert np.all(p.biases[0] == 0)


def test_flat_roundtrip(rng):
    p = init_mlp([3, 4, 2], rng)
    q = p.with_flat(p.flat() * 2)
    np.testing.assert_array_equal(q.flat(), 2 * p.flat())
    assert q.size == p.size == 3 * 4 + 4 + 4 * 2 + 2


# losses -------------------------------------------------------------------


def test_uniform_logits_loss_ln2():
    tr = forward(ModelParams([np.zeros((1, 2))], [np.zeros(2)]), np.ones((2, 1)))
    np.testing.assert_allclose(per_example_losses(tr, [0, 1]), math.log(2), rtol=0, atol=1e-15)


def test_confident_correct_loss_vanishes():
    p = ModelParams([np.zeros((1, 2))], [np.array([20.0, -20.0])])
    assert per_example_losses(forward(p, np.ones((1, 1))), [0])[0] < 1e-8


def test_softmax_ce_matches_straightline(rng):
    p = init_mlp([4, 6, 3], rng, "sigmoid")
    x = rng.standard_normal((25, 4)) * 3
    y = rng.integers(0, 3, 25)
    z = forward(p, x).logits
    oracle = []
    for row, label in zip(z.tolist(), y.tolist()):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        oracle.append(lse - row[label])
    np.testing.assert_allclose(per_example_losses(forward(p, x), y), oracle, rtol=0, atol=1e-12)


def test_logistic_equals_two_class_softmax(rng):
    s = rng.standard_normal(20) * 5
    y = rng.integers(0, 2, 20)
    logit = ModelParams([np.zeros((1, 1))], [np.zeros(1)], (), "logistic")
    tr = forward(logit, np.zeros((20, 1)))
    tr.pre[-1] = s[:, None]
    soft = ModelParams([np.zeros((1, 2))], [np.zeros(2)])
    tr2 = forward(soft, np.zeros((20, 1)))
    tr2.pre[-1] = np.stack([np.zeros(20), s], axis=1)
    np.testing.assert_allclose(per_example_losses(tr, y), per_example_losses(tr2, y), atol=1e-12)


def test_label_validation(rng):
    p = init_mlp([2, 3], rng)
    tr = forward(p, np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        per_example_losses(tr, [0, 3])
    with pytest.raises(ValidationError):
        per_example_losses(tr, [0.5, 1])
    with pytest.raises(ShapeError):
        per_example_losses(tr, [0, 1, 2])


@given(arrays(np.float64, (5, 3), elements=st.floats(-500, 500)), st.lists(st.integers(0, 2), min_size=5, max_size=5))
def test_losses_nonnegative_finite(z, y):
    p = ModelParams([np.zeros((1, 3))], [np.zeros(3)])
    tr = forward(p, np.zeros((5, 1)))
    tr.pre[-1] = z
    losses = per_example_losses(tr, y)
    assert np.all(np.isfinite(losses)) and np.all(losses >= 0)


# backward -----------------------------------------------------------------


@pytest.mark.parametrize("loss", ["softmax", "logistic", "squared"])
@pytest.mark.parametrize("activation", ["relu", "sigmoid", "tanh"])
def test_backward_matches_finite_differences(loss, activation):
    rng = np.random.default_rng(zlib.crc32(f"{loss}/{activation}".encode()))
    for trial in range(20):
        p, x, y, w = _random_net(rng, loss, activation, depth=1 + trial % 2)
        grad, g_emb = backward(p, forward(p, x), w, y)
        for a, g in zip(p.arrays(), grad.arrays()):
            fd = central_diff(lambda: _objective(p, x, y, w), a)
            assert rel_err(g, fd) <= 1e-4 or np.max(np.abs(g - fd)) < 1e-9
        emb = forward(p, x).embedding.copy()
        W, b = p.weights[-1], p.biases[-1]
        head = ModelParams([W], [b], (), loss)

        def f_emb():
            return float(np.mean(w * per_example_losses(forward(head, emb), y)))

        fd = central_diff(f_emb, emb)
        assert rel_err(g_emb, fd) <= 1e-4 or np.max(np.abs(g_emb - fd)) < 1e-9


def test_backward_zero_weights_zero_gradient(rng):
    p, x, y, _ = _random_net(rng, "softmax", "tanh", 2)
    grad, g_emb = backward(p, forward(p, x), np.zeros(len(y)), y)
    assert all(np.all(a == 0) for a in grad.arrays()) and np.all(g_emb == 0)


def test_backward_doubles_with_weights(rng):
    p, x, y, _ = _random_net(rng, "softmax", "relu", 1)
    tr = forward(p, x)
    g1, _ = backward(p, tr, np.ones(len(y)), y)
    g2, _ = backward(p, tr, 2 * np.ones(len(y)), y)
    for a, b in zip(g1.arrays(), g2.arrays()):
        np.testing.assert_array_equal(b, 2 * a)


@given(st.integers(0, 2**32 - 1))
def test_backward_linear_in_weights(seed):
    rng = np.random.default_rng(seed)
    p, x, y, w1 = _random_net(rng, "softmax", "tanh", 1)
    w2 = rng.uniform(0, 2, len(y))
    tr = forward(p, x)
    ga, _ = backward(p, tr, w1 + w2, y)
    gb, _ = backward(p, tr, w1, y)
    gc, _ = backward(p, tr, w2, y)
    for a, b, c in zip(ga.arrays(), gb.arrays(), gc.arrays()):
        np.testing.assert_allclose(a, b + c, rtol=1e-10, atol=1e-13)


def test_backward_rejects_bad_weights(rng):
    p, x, y, w = _random_net(rng, "softmax", "relu", 1)
    tr = forward(p, x)
    w[0] = -0.1
    with pytest.raises(ValidationError):
        backward(p, tr, w, y)
    with pytest.raises(ShapeError):
        backward(p, tr, np.ones(len(y) + 1), y)
    w[0] = np.nan
    with pytest.raises(ValidationError):
        backward(p, tr, w, y)


def test_determinism(rng):
    a = init_mlp([3, 4, 2], rng_stream(7, "init"))
    b = init_mlp([3, 4, 2], rng_stream(7, "init"))
    x = np.ones((2, 3))
    np.testing.assert_array_equal(forward(a, x).logits, forward(b, x).logits)


def test_predict(rng):
    p = ModelParams([np.array([[1.0]])], [np.zeros(1)], (), "logistic")
    assert predict(p, np.array([[-2.0], [3.0]])).tolist() == [0, 1]


# rng ----------------------------------------------------------------------


def test_gaussian_noise_moments():
    z = gaussian_noise(rng_stream(0, "moments"), (1_000_000,))
    assert abs(z.mean()) < 0.005
    assert 0.99 <= z.var() <= 1.01


def test_streams_reproducible_and_distinct():
    a = gaussian_noise(rng_stream(3, "x"), (4, 4))
    b = gaussian_noise(rng_stream(3, "x"), (4, 4))
    c = gaussian_noise(rng_stream(4, "x"), (4, 4))
    d = gaussian_noise(rng_stream(3, "y"), (4, 4))
    np.testing.assert_array_equal(a, b)
    assert np.any(a != c) and np.any(a != d)
