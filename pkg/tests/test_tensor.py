import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mgae.errors import ContractError, DimensionError, NumericError
from mgae.tensor import (AdamState, Parameter, Tensor, adam_step, add, backward, concat_cols,
                         finite_diff_check, gather_rows, glorot_uniform, hadamard, logistic,
                         matmul, mean_all, positive_first_nll, relu, reshape, rowwise_matmul,
                         scale, slice_rows, sparse_matmul, sum_all, zero_grads)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self, rng):
        m = rng.standard_normal((2, 2))
        np.testing.assert_array_equal(matmul(np.eye(2), m).value, m)

    def test_small_product(self):
        out = matmul([[1, 2], [3, 4]], [[1], [1]])
        np.testing.assert_array_equal(out.value, [[3], [7]])

    def test_matches_triple_loop(self, rng):
        a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
        np.testing.assert_allclose(matmul(a, b).value, naive_matmul(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rowwise_is_batch_invariant(self, rng):
        a, b = rng.standard_normal((50, 16)), rng.standard_normal((16, 4))
        full = rowwise_matmul(a, b)
        rows = np.vstack([rowwise_matmul(a[i:i + 1], b) for i in range(50)])
        np.testing.assert_array_equal(full, rows)
        np.testing.assert_allclose(full, a @ b, atol=1e-12)


class TestElementwise:
    def test_hadamard(self):
        np.testing.assert_array_equal(hadamard([1, 2], [3, 0]).value, [[3, 0]])

    def test_hadamard_annihilator_and_identity(self, rng):
        a = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(hadamard(a, np.zeros_like(a)).value, 0)
        np.testing.assert_array_equal(hadamard(a, np.ones_like(a)).value, a)

    def test_hadamard_shape_mismatch(self):
        with pytest.raises(DimensionError):
            hadamard(np.ones((2, 2)), np.ones((2, 3)))

    def test_relu(self, rng):
        np.testing.assert_array_equal(relu([-1, 0, 2]).value, [[0, 0, 2]])
        np.testing.assert_array_equal(relu(-np.abs(rng.standard_normal((3, 3))) - 0.1).value, 0)
        x = rng.standard_normal((4, 4))
        np.testing.assert_array_equal(relu(relu(x)).value, relu(x).value)

    def test_concat(self, rng):
        np.testing.assert_array_equal(concat_cols([[[1, 2]], [[3]]]).value, [[1, 2, 3]])
        x = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(concat_cols([x]).value, x)

    def test_concat_k_squared_parts(self, rng):
        n, d, k = 6, 3, 2
        parts = [rng.standard_normal((n, d)) for _ in range(k * k)]
        assert concat_cols(parts).shape == (n, d * k * k)

    def test_concat_row_mismatch(self):
        with pytest.raises(DimensionError):
            concat_cols([np.ones((2, 1)), np.ones((3, 1))])

    def test_non_finite_is_reported_with_op(self):
        with np.errstate(over="ignore"), pytest.raises(NumericError, match="matmul"):
            matmul([[1e308]], [[1e308]])

    def test_logistic_is_stable(self):
        p = logistic(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_array_equal(p, [0.0, 0.5, 1.0])


class TestBackward:
    def test_sum_gives_ones(self, rng):
        w = Parameter(rng.standard_normal((3, 2)), "w")
        backward(sum_all(w))
        np.testing.assert_array_equal(w.grad, np.ones((3, 2)))

    def test_dead_relu(self, rng):
        w = Parameter(-np.abs(rng.standard_normal((3, 2))) - 0.1, "w")
        backward(sum_all(relu(w)))
        np.testing.assert_array_equal(w.grad, 0)

    def test_accumulates_until_zeroed(self, rng):
        w = Parameter(rng.standard_normal((2, 2)), "w")
        backward(sum_all(w))
        backward(sum_all(w))
        np.testing.assert_array_equal(w.grad, 2 * np.ones((2, 2)))
        zero_grads([w])
        np.testing.assert_array_equal(w.grad, 0)

    def test_shared_subexpression(self, rng):
        w = Parameter(rng.standard_normal((2, 2)), "w")
        h = hadamard(w, w)
        backward(sum_all(add(h, h)))
        np.testing.assert_allclose(w.grad, 4 * w.value)

    def test_non_scalar_loss_rejected(self, rng):
        w = Parameter(rng.standard_normal((2, 2)), "w")
        with pytest.raises(ContractError):
            backward(w)

    def test_two_layer_network_matches_finite_differences(self, rng):
        x = rng.uniform(-1, 1, (6, 4))
        w1 = Parameter(rng.uniform(-1, 1, (4, 5)), "w1")
        b1 = Parameter(rng.uniform(-1, 1, (1, 5)), "b1")
        w2 = Parameter(rng.uniform(-1, 1, (5, 3)), "w2")

        def closure():
            return mean_all(hadamard(h := matmul(relu(add(matmul(x, w1), b1)), w2), h))

        report = finite_diff_check(closure, [w1, b1, w2], h=1e-5, tol=1e-4)
        assert report.passed, str(report)


def _gradcheck_op(build, *shapes, rng):
    params = [Parameter(rng.uniform(-1, 1, s), f"p{i}") for i, s in enumerate(shapes)]
    weights = rng.uniform(-1, 1, build(*params).shape)

    def closure():
        return sum_all(hadamard(build(*params), weights))

    return finite_diff_check(closure, params, h=1e-5, tol=1e-4)


OPS = {
    "matmul": (lambda a, b: matmul(a, b), [(3, 4), (4, 2)]),
    "add": (lambda a, b: add(a, b), [(3, 4), (3, 4)]),
    "add_row": (lambda a, b: add(a, b), [(3, 4), (1, 4)]),
    "hadamard": (lambda a, b: hadamard(a, b), [(3, 4), (3, 4)]),
    "relu": (lambda a: relu(a), [(4, 4)]),
    "scale": (lambda a: scale(a, -2.5), [(2, 3)]),
    "concat": (lambda a, b: concat_cols([a, b, a]), [(3, 2), (3, 1)]),
    "slice": (lambda a: slice_rows(a, 1, 3), [(4, 2)]),
    "gather": (lambda a: gather_rows(a, [0, 2, 2, 1, 0]), [(3, 2)]),
    "reshape": (lambda a: reshape(a, 2, 6), [(3, 4)]),
    "sparse": (lambda a: sparse_matmul(sp.csr_matrix([[0, 1.5, 0], [2, 0, -1]]), a), [(3, 2)]),
    "nll": (lambda a: positive_first_nll(a), [(4, 3)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    build, shapes = OPS[name]
    report = _gradcheck_op(build, *shapes, rng=rng)
    assert report.passed, str(report)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rows=st.integers(1, 5), cols=st.integers(1, 5))
def test_gradient_soundness_property(seed, rows, cols):
    rng = np.random.default_rng(seed)
    a = Parameter(rng.uniform(-1, 1, (rows, cols)), "a")
    b = Parameter(rng.uniform(-1, 1, (cols, 3)), "b")
    c = rng.uniform(-1, 1, (rows, 3))

    def closure():
        return sum_all(hadamard(relu(matmul(hadamard(a, a), b)), c))

    report = finite_diff_check(closure, [a, b], h=1e-5, tol=1e-4)
    assert report.passed, str(report)


class TestPositiveFirstNll:
    def test_uniform_scores(self):
        assert positive_first_nll(np.zeros((3, 5))).item() == pytest.approx(math.log(5), abs=1e-15)

    def test_stable_for_large_scores(self):
        assert positive_first_nll([[1000.0, 0.0, -5.0]]).item() == pytest.approx(0.0, abs=1e-12)


class TestAdam:
    def test_first_step_moves_by_lr(self, rng):
        g = rng.standard_normal((3, 3))
        p = Parameter(np.zeros((3, 3)), "p")
        p.grad = g.copy()
        adam_step([p], AdamState(lr=0.01))
        np.testing.assert_allclose(p.value, -0.01 * np.sign(g), rtol=1e-6)

    def test_zero_grad_leaves_params(self, rng):
        v = rng.standard_normal((2, 2))
        p = Parameter(v, "p")
        state = AdamState()
        adam_step([p], state)
        np.testing.assert_array_equal(p.value, v)
        assert state.step == 1

    def test_quadratic_bowl(self):
        p = Parameter([[0.5, -0.8, 1.0]], "x")
        state = AdamState(lr=0.01)
        for _ in range(500):
            zero_grads([p])
            backward(sum_all(hadamard(p, p)))
            adam_step([p], state)
        assert np.abs(p.value).max() < 1e-3
        assert state.step == 500

    def test_moment_shapes_follow_params(self, rng):
        p = Parameter(rng.standard_normal((4, 2)), "p")
        state = AdamState()
        p.grad = np.ones((4, 2))
        adam_step([p], state)
        assert state.m["p"].shape == state.v["p"].shape == (4, 2)

    def test_invalid_hyperparameters(self):
        with pytest.raises(ContractError):
            AdamState(lr=0)
        with pytest.raises(ContractError):
            AdamState(beta1=1.0)


class TestFiniteDiffCheck:
    def test_linear_model_is_exact(self, rng):
        x = rng.uniform(-1, 1, (5, 3))
        w = Parameter(rng.uniform(-1, 1, (3, 2)), "w")
        report = finite_diff_check(lambda: sum_all(matmul(x, w)), [w])
        assert report.worst_error < 1e-8

    def test_failure_names_parameter(self, rng):
        w = Parameter(rng.uniform(0.5, 1, (2, 2)), "broken")
        good = Parameter(rng.uniform(0.5, 1, (2, 2)), "fine")

        def wrong_grad(a):
            # forward is a*a but the recorded gradient claims 3*g instead of 2*a*g
            return Tensor(a.value * a.value, (a,), lambda g: (3 * g,), "bad", True)

        report = finite_diff_check(lambda: sum_all(add(wrong_grad(w), good)), [w, good])
        assert not report.passed
        assert report.failures == ["broken"]
        assert "broken" in str(report)

    def test_nondeterministic_closure(self, rng):
        w = Parameter(np.ones((1, 1)), "w")
        noise = np.random.default_rng(0)
        with pytest.raises(ContractError, match="deterministic"):
            finite_diff_check(lambda: sum_all(scale(w, noise.random())), [w])


def test_glorot_limit(rng):
    w = glorot_uniform(30, 20, rng)
    assert np.abs(w).max() <= math.sqrt(6 / 50)
    assert w.shape == (30, 20)


def test_determinism(rng):
    x = rng.standard_normal((10, 6))
    w = rng.standard_normal((6, 3))
    first = relu(matmul(x, w)).value
    second = relu(matmul(x.copy(), w.copy())).value
    assert first.tobytes() == second.tobytes()
