import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from mlta.autodiff import Parameter, Tape, grad_check
from mlta.errors import NonScalarLoss, ShapeMismatch


def weighted_sum(tape, node, rng_seed=0):
    """Reduce to a scalar with fixed random weights so every output entry matters."""
    w = np.random.default_rng(rng_seed).standard_normal(node.shape)
    return tape.sum(tape.mul(node, tape.constant(w)))


SEGMENTS = np.array([0, 2, 0, 1, 2, 2])
# per-primitive forward builders: (param shapes, fn(tape, *nodes) -> node)
PRIMITIVES = {
    "matmul": ([(3, 4), (4, 2)], lambda t, a, b: t.matmul(a, b)),
    "add": ([(3, 4), (3, 4)], lambda t, a, b: t.add(a, b)),
    "add_row_broadcast": ([(3, 4), (1, 4)], lambda t, a, b: t.add(a, b)),
    "sub_col_broadcast": ([(3, 4), (3, 1)], lambda t, a, b: t.sub(a, b)),
    "mul": ([(3, 4), (3, 4)], lambda t, a, b: t.mul(a, b)),
    "mul_broadcast": ([(3, 4), (1, 4)], lambda t, a, b: t.mul(a, b)),
    "scalar_mul": ([(2, 3)], lambda t, a: t.scalar_mul(a, -2.5)),
    "transpose": ([(2, 3)], lambda t, a: t.transpose(a)),
    "row_concat": ([(2, 3), (1, 3)], lambda t, a, b: t.row_concat([a, b])),
    "col_concat": ([(2, 3), (2, 1)], lambda t, a, b: t.col_concat([a, b])),
    "rows": ([(5, 3)], lambda t, a: t.rows(a, 1, 4)),
    "gather_rows": ([(4, 3)], lambda t, a: t.gather_rows(a, np.array([3, 0, 0, 2, 3]))),
    "sum": ([(3, 3)], lambda t, a: t.sum(a)),
    "mean": ([(3, 3)], lambda t, a: t.mean(a)),
    "pick": ([(3, 4)], lambda t, a: t.pick(a, [1, 3, 0])),
    "segment_sum": ([(6, 2)], lambda t, a: t.segment_sum(a, SEGMENTS, 3)),
    "segment_mean": ([(6, 2)], lambda t, a: t.segment_mean(a, SEGMENTS, 3)),
    "segment_max_abs": ([(6, 2)], lambda t, a: t.segment_max_abs(a, SEGMENTS, 3)),
    "relu": ([(3, 4)], lambda t, a: t.relu(a)),
    "leaky_relu": ([(3, 4)], lambda t, a: t.leaky_relu(a, 0.2)),
    "exp": ([(2, 3)], lambda t, a: t.exp(a)),
    "log": ([(2, 3)], lambda t, a: t.log(t.add(t.mul(a, a), t.constant(np.ones((2, 3)))))),
    "softmax_rows": ([(3, 4)], lambda t, a: t.softmax_rows(a)),
    "log_softmax_rows": ([(3, 4)], lambda t, a: t.log_softmax_rows(a)),
    "masked_softmax": ([(3, 3)], lambda t, a: t.masked_softmax(a, np.array([[1, 0, 1], [0, 1, 0], [1, 1, 1]], bool))),
    "segment_softmax": ([(6, 2)], lambda t, a: t.segment_softmax(a, SEGMENTS, 3)),
    "spmm": ([(3, 2)], lambda t, a: t.spmm(sp.csr_matrix([[1.0, 0, 2], [0, 0, 3]]), a)),
    "dropout_train": ([(4, 3)], lambda t, a: t.dropout(a, 0.5, True, np.random.default_rng(7))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_gradients(name, seed):
    shapes, fn = PRIMITIVES[name]
    rng = np.random.default_rng(seed)
    params = [Parameter(rng.standard_normal(s), f"p{i}") for i, s in enumerate(shapes)]

    def loss(tape):
        return weighted_sum(tape, fn(tape, *(tape.param(p) for p in params)), seed)

    report = grad_check(loss, params, epsilon=1e-5, tolerance=1e-4)
    assert report.passed, (name, report.max_rel_error, report.worst)


class TestExamples:
    def test_identity_matmul(self, rng):
        m = rng.standard_normal((3, 4))
        t = Tape()
        np.testing.assert_array_equal(t.matmul(t.constant(np.eye(3)), t.constant(m)).value, m)

    def test_relu(self):
        t = Tape()
        np.testing.assert_array_equal(t.relu(t.constant([[-1.0, 2.0]])).value, [[0.0, 2.0]])

    def test_segment_mean_equal_rows(self):
        t = Tape()
        out = t.segment_mean(t.constant([[1.0, 2.0], [1.0, 2.0]]), np.array([0, 0]), 1)
        np.testing.assert_array_equal(out.value, [[1.0, 2.0]])

    def test_grad_of_sum_wx(self, rng):
        x = rng.standard_normal((4, 1))
        w = Parameter(rng.standard_normal((3, 4)))
        t = Tape()
        t.backward(t.sum(t.matmul(t.param(w), t.constant(x))))
        np.testing.assert_allclose(w.grad, np.tile(x.T, (3, 1)), rtol=0, atol=1e-15)

    def test_unused_param_zero_grad(self, rng):
        w = Parameter(rng.standard_normal((2, 2)))
        w.grad = np.ones((2, 2))
        t = Tape()
        t.param(w)
        t.backward(t.sum(t.constant(np.ones((2, 2)))))
        np.testing.assert_array_equal(w.grad, np.zeros((2, 2)))

    def test_squared_norm(self, rng):
        w = Parameter(rng.standard_normal((3, 2)))
        t = Tape()
        n = t.param(w)
        t.backward(t.sum(t.mul(n, n)))
        np.testing.assert_allclose(w.grad, 2 * w.value, rtol=1e-15)

    def test_param_reused_accumulates(self, rng):
        w = Parameter(rng.standard_normal((2, 2)))
        t = Tape()
        n = t.param(w)
        t.backward(t.sum(t.add(n, t.scalar_mul(t.param(w), 3.0))))
        np.testing.assert_allclose(w.grad, np.full((2, 2), 4.0))


class TestGradCheck:
    def test_quadratic(self, rng):
        a = rng.standard_normal((3, 3))
        sym = a @ a.T
        w = Parameter(rng.standard_normal((3, 1)))

        def f(tape):
            x = tape.param(w)
            return tape.sum(tape.mul(x, tape.matmul(tape.constant(sym), x)))

        assert grad_check(f, [w]).max_rel_error < 1e-6

    def test_constant(self, rng):
        w = Parameter(rng.standard_normal((2, 2)))
        report = grad_check(lambda t: t.sum(t.constant(np.ones((1, 1)))), [w])
        assert report.max_rel_error == 0.0
        np.testing.assert_array_equal(w.grad, 0.0)

    def test_detects_wrong_gradient(self, rng):
        w = Parameter(rng.standard_normal((2, 2)))

        def broken(tape):
            x = tape.param(w)
            # record relu's value with an identity vjp: wrong for negative entries
            out = tape._record(np.maximum(x.value, 0) * 3, (x,), lambda g: (g,))
            return tape.sum(out)

        w.value[:] = [[1.0, -1.0], [2.0, 0.5]]
        assert not grad_check(broken, [w]).passed

    def test_restores_values(self, rng):
        w = Parameter(rng.standard_normal((2, 3)))
        before = w.value.copy()
        grad_check(lambda t: t.sum(t.exp(t.param(w))), [w])
        np.testing.assert_array_equal(w.value, before)


class TestInvariants:
    def test_non_scalar_loss(self):
        t = Tape()
        with pytest.raises(NonScalarLoss):
            t.backward(t.constant(np.ones((2, 1))))

    def test_shape_mismatch(self):
        t = Tape()
        with pytest.raises(ShapeMismatch):
            t.matmul(t.constant(np.ones((2, 3))), t.constant(np.ones((2, 3))))
        with pytest.raises(ShapeMismatch):
            t.add(t.constant(np.ones((2, 3))), t.constant(np.ones((3, 2))))

    def test_dropout_eval_is_identity(self, rng):
        t = Tape()
        a = t.constant(rng.standard_normal((5, 5)))
        assert t.dropout(a, 0.5, False) is a

    def test_dropout_scaled_and_seeded(self, rng):
        t = Tape()
        a = t.constant(np.ones((50, 50)))
        out1 = t.dropout(a, 0.5, True, np.random.default_rng(3)).value
        out2 = t.dropout(a, 0.5, True, np.random.default_rng(3)).value
        np.testing.assert_array_equal(out1, out2)
        assert set(np.unique(out1)) <= {0.0, 2.0}

    def test_backward_deterministic(self, rng):
        w = Parameter(rng.standard_normal((4, 3)))
        x = rng.standard_normal((5, 4))
        grads = []
        for _ in range(2):
            t = Tape()
            t.backward(t.sum(t.softmax_rows(t.matmul(t.constant(x), t.param(w)))))
            grads.append(w.grad.copy())
        np.testing.assert_array_equal(grads[0], grads[1])

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_softmax_rows_sum_to_one(self, r, c, seed):
        x = np.random.default_rng(seed).standard_normal((r, c)) * 50
        out = Tape().softmax_rows(Tape().constant(x)).value
        np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    @given(st.integers(1, 20), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_segment_softmax_sums_to_one(self, n, segs, seed):
        rng = np.random.default_rng(seed)
        segments = rng.integers(0, segs, n)
        x = rng.standard_normal((n, 2)) * 30
        out = Tape().segment_softmax(Tape().constant(x), segments, segs).value
        for s in np.unique(segments):
            np.testing.assert_allclose(out[segments == s].sum(axis=0), 1.0, rtol=0, atol=1e-12)

    def test_masked_softmax_zeros_masked(self):
        t = Tape()
        out = t.masked_softmax(t.constant([[1.0, 5.0, 2.0]]), np.array([[True, False, True]])).value
        assert out[0, 1] == 0.0
        assert out.sum() == pytest.approx(1.0, abs=1e-15)
