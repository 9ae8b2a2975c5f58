import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ustra import autodiff as ad
from ustra.errors import ContractError, DimensionError, DomainError, NumericError

from conftest import leaf_grads


def numeric_grad(f, x, step=1e-6):
    """Central differences of a numpy -> float function."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + step
        fp = f(x)
        x[i] = orig - step
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a, n):
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a)))) if np.size(a) else 0.0


def _away_from_zero(rng, shape, lo=0.1):
    x = rng.uniform(lo, 2.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _weighted(fn, rng, inputs):
    """Scalar sum(fn(...) * R) with a fixed random R."""
    out_shape = fn(*[ad.Tape().variable(a) for a in inputs]).value.shape
    R = rng.standard_normal(out_shape)

    def scalar(*nodes):
        out = fn(*nodes)
        return ad.sum(ad.mul(out, R)) if out.value.ndim else out
    return scalar


OP_CASES = {
    "matmul": lambda r: ([r.standard_normal((3, 4)), r.standard_normal((4, 2))], ad.matmul),
    "transpose": lambda r: ([r.standard_normal((3, 4))], ad.transpose),
    "outer": lambda r: ([r.standard_normal(3), r.standard_normal(4)], ad.outer),
    "diag": lambda r: ([r.standard_normal(3)], ad.diag),
    "trace": lambda r: ([r.standard_normal((3, 3))], ad.trace),
    "add": lambda r: ([r.standard_normal((3, 4)), r.standard_normal(4)], ad.add),
    "sub": lambda r: ([r.standard_normal((3, 4)), r.standard_normal((3, 4))], ad.sub),
    "neg": lambda r: ([r.standard_normal((2, 3))], ad.neg),
    "mul": lambda r: ([r.standard_normal((3, 4)), r.standard_normal((1, 4))], ad.mul),
    "logaddexp": lambda r: ([r.standard_normal((3, 2)), r.standard_normal((3, 2))], ad.logaddexp),
    "sigmoid": lambda r: ([r.standard_normal((3, 4)) * 3], ad.sigmoid),
    "tanh": lambda r: ([r.standard_normal((3, 4))], ad.tanh),
    "relu": lambda r: ([_away_from_zero(r, (3, 4))], ad.relu),
    "max0": lambda r: ([_away_from_zero(r, (3, 4))], ad.max0),
    "exp": lambda r: ([r.standard_normal((3, 4))], ad.exp),
    "log": lambda r: ([r.uniform(0.2, 3.0, (3, 4))], ad.log),
    "reciprocal": lambda r: ([r.uniform(0.5, 3.0, (3, 4))], ad.reciprocal),
    "softplus": lambda r: ([r.standard_normal((3, 4)) * 3], ad.softplus),
    "square": lambda r: ([r.standard_normal((3, 4))], ad.square),
    "clip": lambda r: ([r.uniform(0.05, 0.95, (3, 4))], lambda x: ad.clip(x, 0.0, 1.0)),
    "softmax": lambda r: ([r.standard_normal((3, 4)) * 2], ad.softmax),
    "concat": lambda r: (
        [r.standard_normal((3, 2)), r.standard_normal((3, 3))],
        lambda a, b: ad.concat([a, b], axis=1),
    ),
    "rows": lambda r: ([r.standard_normal((5, 3))], lambda x: ad.rows(x, 1, 4)),
    "cols": lambda r: ([r.standard_normal((3, 5))], lambda x: ad.cols(x, 2, 5)),
    "reshape": lambda r: ([r.standard_normal((4, 3))], lambda x: ad.reshape(x, (2, 6))),
    "repeat_rows": lambda r: ([r.standard_normal((2, 3))], lambda x: ad.repeat_rows(x, 3)),
    "sum": lambda r: ([r.standard_normal((3, 4))], ad.sum),
    "mean": lambda r: ([r.standard_normal((3, 4))], lambda x: ad.mean(x, axis=0)),
    "max": lambda r: ([r.permutation(12).reshape(3, 4) * 0.1], lambda x: ad.max(x, axis=1)),
    "segment_max": lambda r: ([r.permutation(18).reshape(6, 3) * 0.1], lambda x: ad.segment_max(x, 3)),
    "segment_mean": lambda r: ([r.standard_normal((6, 3))], lambda x: ad.segment_mean(x, 2)),
    "graph_conv": lambda r: (
        [r.standard_normal((4, 3)), r.standard_normal((3, 5)), r.standard_normal(5)],
        lambda x, w, b: ad.graph_conv(_fixed_adj(4), x, w, b, "tanh"),
    ),
    "gated_update": lambda r: (
        [r.uniform(0, 1, (3, 4)), r.standard_normal((3, 4)), r.standard_normal((3, 4))],
        ad.gated_update,
    ),
}


def _fixed_adj(n):
    a = np.exp(-np.abs(np.subtract.outer(np.arange(n), np.arange(n))) / 2.0)
    return a / a.sum()


class TestForwardExamples:
    def test_matmul_identity(self, rng):
        X = rng.standard_normal((3, 4))
        t = ad.Tape()
        out = ad.forward_op("matmul", t.constant(np.eye(3)), t.constant(X))
        np.testing.assert_array_equal(out.value, X)

    def test_softmax_of_zero_row(self):
        out = ad.softmax(ad.Tape().constant(np.zeros((1, 2))))
        np.testing.assert_array_equal(out.value, [[0.5, 0.5]])

    def test_trace_by_hand(self):
        out = ad.trace(ad.Tape().constant(np.array([[0.25, -0.25], [-0.25, 0.25]])))
        assert float(out.value) == 0.5

    def test_shape_mismatch_names_shapes(self):
        t = ad.Tape()
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.matmul(t.variable(np.ones((2, 3))), t.variable(np.ones((4, 5))))

    def test_log_of_nonpositive(self):
        with pytest.raises(DomainError):
            ad.log(ad.Tape().variable(np.array([1.0, 0.0])))

    def test_unknown_op(self):
        with pytest.raises(ContractError):
            ad.forward_op("conv3d", ad.Tape().constant(1.0))

    def test_every_registered_op_has_a_gradient_case(self):
        assert set(ad.OPS) <= set(OP_CASES)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        _, (g,) = leaf_grads(ad.sum, rng.standard_normal((3, 2)))
        np.testing.assert_array_equal(g, np.ones((3, 2)))

    def test_product_rule(self):
        _, (gx, gy) = leaf_grads(ad.mul, np.array(3.0), np.array(-2.0))
        assert (float(gx), float(gy)) == (-2.0, 3.0)

    def test_log_softmax_against_differences(self):
        z = np.array([[1.0, 2.0]])

        def f(n):
            return ad.sum(ad.cols(ad.log(ad.softmax(n)), 0, 1))

        _, (g,) = leaf_grads(f, z)
        num = numeric_grad(lambda x: math.log(np.exp(x[0, 0]) / np.exp(x).sum()), z)
        assert rel_err(g, num) < 1e-8

    def test_non_scalar_root(self):
        t = ad.Tape()
        x = t.variable(np.ones(3))
        with pytest.raises(ContractError):
            t.backward(x)

    def test_backward_is_repeatable(self, rng):
        t = ad.Tape()
        x = t.variable(rng.standard_normal((2, 2)))
        loss = ad.sum(ad.square(ad.matmul(x, x)))
        g1 = t.backward(loss)[x].copy()
        g2 = t.backward(loss)[x]
        np.testing.assert_array_equal(g1, g2)

    def test_adjoint_shapes_match_values(self, rng):
        t = ad.Tape()
        a = t.variable(rng.standard_normal((3, 4)))
        b = t.variable(rng.standard_normal(4))
        loss = ad.sum(ad.tanh(ad.add(a, b)))
        t.backward(loss)
        for node in t.nodes:
            assert node.grad.shape == node.value.shape

    def test_constants_are_not_recorded(self):
        t = ad.Tape()
        c = t.constant(np.ones(3))
        ad.exp(c)
        assert len(t) == 0

    def test_reset_clears_tape(self):
        t = ad.Tape()
        ad.exp(t.variable(np.ones(2)))
        t.reset()
        assert len(t) == 0

    def test_concat_then_split_is_identity_on_adjoints(self, rng):
        a, b = rng.standard_normal((3, 2)), rng.standard_normal((3, 4))
        R = rng.standard_normal((3, 6))

        def f(x, y):
            cat = ad.concat([x, y], axis=1)
            back = ad.concat([ad.cols(cat, 0, 2), ad.cols(cat, 2, 6)], axis=1)
            return ad.sum(ad.mul(back, R))

        _, (ga, gb) = leaf_grads(f, a, b)
        np.testing.assert_array_equal(ga, R[:, :2])
        np.testing.assert_array_equal(gb, R[:, 2:])

    def test_max_ties_route_to_first(self):
        x = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        _, (g,) = leaf_grads(lambda n: ad.sum(ad.segment_max(n, 3)), x)
        np.testing.assert_array_equal(g, [[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])


class TestOpGradients:
    @pytest.mark.parametrize("kind", sorted(OP_CASES))
    def test_matches_central_differences(self, kind):
        rng = np.random.default_rng(sum(map(ord, kind)))
        worst = 0.0
        for _ in range(100):
            inputs, fn = OP_CASES[kind](rng)
            scalar = _weighted(fn, rng, inputs)
            _, grads = leaf_grads(scalar, *inputs)
            for i, x in enumerate(inputs):
                def f(xi, i=i):
                    args = list(inputs)
                    args[i] = xi
                    t = ad.Tape()
                    return float(scalar(*[t.constant(a) for a in args]).value)
                worst = max(worst, rel_err(grads[i], numeric_grad(f, x)))
        assert worst < 1e-5, f"{kind}: {worst:.2e}"


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        assert ad.grad_check(lambda x: ad.sum(ad.square(x)), rng.standard_normal(6)) < 1e-7

    def test_constant_function(self, rng):
        assert ad.grad_check(lambda x: ad.Tape().constant(3.0), rng.standard_normal(4)) == 0.0

    def test_trace_of_outer(self, rng):
        assert ad.grad_check(lambda x: ad.trace(ad.outer(x, x)), rng.standard_normal(5)) < 1e-7

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_intermediate(self):
        with pytest.raises(NumericError):
            ad.grad_check(lambda x: ad.mul(ad.exp(x), 1e308), np.array([10.0]))

    def test_detects_a_wrong_gradient(self):
        def bad(x):
            # value x^2 but claims gradient 3x
            return x.tape.record("bad", x.value**2, (x,), lambda g: (3.0 * x.value * g,))

        assert ad.grad_check(lambda x: ad.sum(bad(x)), np.array([1.0, 2.0])) > 0.1


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)))
    def test_softmax_rows_on_simplex(self, x):
        y = ad.softmax(ad.Tape().constant(x)).value
        assert np.all(y >= 0)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 3), elements=st.floats(-5, 5)))
    def test_sum_gradient_is_ones(self, x):
        _, (g,) = leaf_grads(ad.sum, x)
        np.testing.assert_array_equal(g, np.ones_like(x))
