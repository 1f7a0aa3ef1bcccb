import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owcl.errors import DomainError, NumericError, ShapeError
from owcl.numcore import (
    Activation,
    DenseLayer,
    Optimizer,
    cross_entropy,
    cross_entropy_batch,
    glorot_uniform,
    grad_check,
    logsumexp,
    make_rng,
    matmul,
    softmax,
    squared_error,
)


def triple_loop(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


def test_matmul_matches_triple_loop():
    rng = make_rng(1)
    for _ in range(20):
        n, k, m = rng.integers(1, 6, size=3)
        a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
        np.testing.assert_allclose(matmul(a, b), triple_loop(a.tolist(), b.tolist()), atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_make_rng_is_reproducible():
    assert np.array_equal(make_rng(7).random(5), make_rng(7).random(5))
    assert not np.array_equal(make_rng(7).random(5), make_rng(8).random(5))


def test_logsumexp_scalar_oracle():
    z = [1.0, -2.0, 0.5]
    assert logsumexp(z) == pytest.approx(math.log(sum(math.exp(v) for v in z)), abs=1e-12)


def test_logsumexp_is_stable_for_large_inputs():
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2.0))


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])
    p = softmax([1.0, 2.0, 3.0])
    e = [math.exp(v) for v in (1.0, 2.0, 3.0)]
    np.testing.assert_allclose(p, [v / sum(e) for v in e], atol=1e-15)


def test_empty_vectors_are_domain_errors():
    with pytest.raises(DomainError):
        logsumexp([])
    with pytest.raises(DomainError):
        softmax([])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariant(z, c):
    np.testing.assert_allclose(softmax(z), softmax(np.asarray(z) + c), atol=1e-12)


def test_cross_entropy_value_and_label_range():
    loss, grad = cross_entropy([2.0, 0.0], 0)
    assert loss == pytest.approx(math.log(1 + math.exp(-2.0)))
    assert grad.sum() == pytest.approx(0.0)
    with pytest.raises(IndexError):
        cross_entropy([1.0, 2.0], 2)


def test_cross_entropy_batch_gradient_by_finite_differences():
    rng = make_rng(2)
    z = rng.normal(size=(4, 5))
    y = np.array([0, 3, 4, 1])
    _, g = cross_entropy_batch(z, y)
    err = grad_check(lambda: cross_entropy_batch(z, y)[0], {"z": z}, {"z": g})
    assert err < 1e-6


def test_squared_error():
    val, g = squared_error([1.0, 2.0], [0.0, 4.0])
    assert val == 5.0
    np.testing.assert_array_equal(g, [2.0, -4.0])
    with pytest.raises(ShapeError):
        squared_error([1.0], [1.0, 2.0])


def test_glorot_bounds():
    w = glorot_uniform(make_rng(0), 30, 20)
    assert w.shape == (30, 20)
    assert np.abs(w).max() <= math.sqrt(6.0 / 50)


@pytest.mark.parametrize("act", list(Activation))
def test_dense_backward_by_finite_differences(act):
    rng = make_rng(3)
    layer = DenseLayer.init(rng, 4, 3, act)
    layer.bias[:] = rng.normal(size=3) * 0.1
    x = rng.normal(size=(5, 4))
    target = rng.normal(size=(5, 3))

    def loss():
        out, _ = layer.forward(x)
        return squared_error(out, target)[0]

    out, cache = layer.forward(x)
    _, gout = squared_error(out, target)
    dx, dw, db = layer.backward(cache, gout)
    assert grad_check(loss, {"W": layer.weights, "b": layer.bias, "x": x}, {"W": dw, "b": db, "x": dx}) < 1e-5


def test_dense_forward_rejects_wrong_width():
    layer = DenseLayer.init(make_rng(0), 4, 2)
    with pytest.raises(ShapeError):
        layer.forward(np.ones((1, 3)))


def test_sgd_step_scalar_oracle():
    p = {"w": np.array([1.0, -1.0])}
    Optimizer("sgd", 0.1).step(p, {"w": np.array([0.5, 2.0])})
    np.testing.assert_allclose(p["w"], [0.95, -1.2])


def test_rmsprop_two_steps_scalar_oracle():
    opt = Optimizer("rmsprop", 0.01, 0.9, 1e-8)
    p = {"w": np.array([1.0])}
    a, w = 0.0, 1.0
    for g in (0.5, -0.2):
        opt.step(p, {"w": np.array([g])})
        a = 0.9 * a + 0.1 * g * g
        w -= 0.01 * g / math.sqrt(a + 1e-8)
    assert p["w"][0] == pytest.approx(w, abs=1e-15)


def test_rmsprop_keeps_statistics_when_rows_are_added():
    opt = Optimizer("rmsprop", 0.01)
    p = {"w": np.ones((2, 2))}
    opt.step(p, {"w": np.ones((2, 2))})
    p["w"] = np.vstack([p["w"], np.ones((1, 2))])
    opt.step(p, {"w": np.ones((3, 2))})
    acc = opt.accumulators["w"]
    assert acc.shape == (3, 2)
    assert acc[0, 0] == pytest.approx(0.9 * 0.1 + 0.1)
    assert acc[2, 0] == pytest.approx(0.1)


def test_optimizer_validation():
    with pytest.raises(DomainError):
        Optimizer("sgd", 0.0)
    with pytest.raises(DomainError):
        Optimizer("rmsprop", 0.1, rmsprop_decay=1.0)


def test_grad_check_detects_a_wrong_gradient_and_bad_epsilon():
    x = np.array([1.0, 2.0])
    assert grad_check(lambda: float(np.sum(x ** 2)), {"x": x}, {"x": 2 * x}) < 1e-8
    assert grad_check(lambda: float(np.sum(x ** 2)), {"x": x}, {"x": x}) > 0.4
    with pytest.raises(DomainError):
        grad_check(lambda: 0.0, {"x": x}, {"x": x}, epsilon=1e-2)
    with pytest.raises(NumericError):
        grad_check(lambda: float("nan"), {"x": x}, {"x": x})


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 16))
def test_cross_entropy_batch_is_row_mean(n, c, seed):
    rng = make_rng(seed)
    z = rng.normal(size=(n, c)) * 3
    y = rng.integers(0, c, size=n)
    loss, g = cross_entropy_batch(z, y)
    rows = [cross_entropy(z[i], int(y[i])) for i in range(n)]
    assert loss == pytest.approx(np.mean([r[0] for r in rows]), abs=1e-12)
    np.testing.assert_allclose(g, np.stack([r[1] for r in rows]) / n, atol=1e-15)
