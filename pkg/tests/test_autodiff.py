import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activation_bottleneck import autodiff as ad

from oracles import central_difference, dense_mse_plain


def scalar(tape, v):
    return tape.leaf(np.float64(v))


class TestForwardOp:
    def test_add(self):
        t = ad.Tape()
        assert float(ad.forward_op("add", [scalar(t, 2.0), scalar(t, 3.0)]).data) == 5.0

    def test_tanh_origin(self):
        t = ad.Tape()
        assert float(ad.forward_op("tanh", [scalar(t, 0.0)]).data) == 0.0

    def test_logistic_origin(self):
        t = ad.Tape()
        assert float(ad.forward_op("logistic", [scalar(t, 0.0)]).data) == 0.5

    def test_relu_and_identity(self):
        t = ad.Tape()
        x = t.leaf([-1.0, 2.0])
        np.testing.assert_array_equal(ad.forward_op("relu", [x]).data, [0.0, 2.0])
        np.testing.assert_array_equal(ad.forward_op("linear_identity", [x]).data, [-1.0, 2.0])

    def test_matvec(self):
        t = ad.Tape()
        w = t.leaf([[1.0, 2.0], [3.0, 4.0]])
        x = t.leaf([1.0, -1.0])
        np.testing.assert_array_equal(ad.forward_op("matvec", [w, x]).data, [-1.0, -1.0])

    def test_matvec_dimension_mismatch_names_op_and_shapes(self):
        t = ad.Tape()
        w = t.leaf(np.zeros((2, 3)))
        x = t.leaf(np.zeros(2))
        with pytest.raises(ad.ShapeError) as exc:
            ad.forward_op("matvec", [w, x])
        assert exc.value.op == "matvec"
        assert "(2, 3)" in str(exc.value) and "(2,)" in str(exc.value)

    def test_add_shape_mismatch(self):
        t = ad.Tape()
        with pytest.raises(ad.ShapeError):
            ad.add(t.leaf(np.zeros(2)), t.leaf(np.zeros(3)))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            ad.forward_op("softmax", [])

    def test_large_logistic_is_finite(self):
        t = ad.Tape()
        y = ad.logistic(t.leaf([-1000.0, 1000.0]))
        np.testing.assert_array_equal(y.data, [0.0, 1.0])


class TestBackward:
    def test_square(self):
        t = ad.Tape()
        x = scalar(t, 3.0)
        grads = ad.backward(t, ad.mul(x, x))
        assert grads[x.id] == pytest.approx(6.0)
        assert float(x.grad) == pytest.approx(6.0)

    def test_tanh_slope_at_origin(self):
        t = ad.Tape()
        x = scalar(t, 0.0)
        ad.backward(t, ad.tanh(x))
        assert float(x.grad) == 1.0

    def test_grad_zero_before_backward_and_after_reset(self):
        t = ad.Tape()
        x = scalar(t, 2.0)
        y = ad.mul(x, x)
        assert float(x.grad) == 0.0
        ad.backward(t, y)
        t.reset()
        assert all(float(np.sum(v.grad)) == 0.0 for v in t.values)

    def test_accumulates_across_calls(self):
        t = ad.Tape()
        x = scalar(t, 3.0)
        y = ad.mul(x, x)
        ad.backward(t, y)
        ad.backward(t, y)
        assert float(x.grad) == pytest.approx(12.0)

    def test_root_not_on_tape(self):
        t1, t2 = ad.Tape(), ad.Tape()
        y = ad.tanh(scalar(t2, 1.0))
        with pytest.raises(ad.TapeError):
            ad.backward(t1, y)

    def test_root_after_truncation_is_rejected(self):
        t = ad.Tape()
        x = scalar(t, 1.0)
        mark = t.checkpoint()
        y = ad.tanh(x)
        t.truncate(mark)
        assert len(t) == 1
        with pytest.raises(ad.TapeError):
            ad.backward(t, y)

    def test_non_scalar_root(self):
        t = ad.Tape()
        with pytest.raises(ad.ShapeError):
            ad.backward(t, t.leaf([1.0, 2.0]))

    def test_dense_mse_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        w0 = rng.uniform(-1, 1, (2, 3))
        b0 = rng.uniform(-1, 1, 2)
        x0 = np.array([0.3, -1.2, 2.0])
        y0 = np.array([0.5, -0.25])

        fd_w = central_difference(lambda w: dense_mse_plain(w, b0, x0, y0), w0)
        fd_b = central_difference(lambda b: dense_mse_plain(w0, b, x0, y0), b0)

        t = ad.Tape()
        w, b = t.leaf(w0), t.leaf(b0)
        d = ad.sub(ad.tanh(ad.add(ad.matvec(w, t.const(x0)), b)), t.const(y0))
        loss = ad.mul(ad.total(ad.mul(d, d)), t.const(0.5))
        ad.backward(t, loss)
        assert float(loss.data) == pytest.approx(dense_mse_plain(w0, b0, x0, y0), rel=1e-14)
        for got, want in ((w.grad, fd_w), (b.grad, fd_b)):
            rel = np.abs(got - want) / np.maximum(np.abs(got), np.abs(want))
            assert rel.max() < 1e-4

    def test_reuse_of_a_value_sums_paths(self):
        t = ad.Tape()
        x = scalar(t, 0.7)
        y = ad.add(ad.mul(x, x), ad.tanh(x))
        ad.backward(t, y)
        assert float(x.grad) == pytest.approx(2 * 0.7 + 1 - np.tanh(0.7) ** 2)

    def test_concat_take_total(self):
        t = ad.Tape()
        a = t.leaf([1.0, 2.0])
        b = t.leaf([3.0])
        c = ad.concat([a, b])
        s = ad.total(ad.mul(ad.take(c, 1, 3), t.const([10.0, 100.0])))
        ad.backward(t, s)
        np.testing.assert_array_equal(a.grad, [0.0, 10.0])
        np.testing.assert_array_equal(b.grad, [100.0])


def _unary(op):
    return lambda t, x: ad.forward_op(op, [x])


UNARY = ["tanh", "logistic", "relu", "linear_identity"]


@pytest.mark.parametrize("op", UNARY)
def test_unary_ops_match_finite_differences(op):
    pts = np.random.default_rng(11).uniform(-3, 3, 100)
    for p in pts:
        t = ad.Tape()
        x = scalar(t, p)
        ad.backward(t, ad.forward_op(op, [x]))

        def f(v):
            tt = ad.Tape()
            return float(ad.forward_op(op, [tt.leaf(v)]).data)

        fd = central_difference(f, np.float64(p))
        a = float(x.grad)
        den = max(abs(a), abs(float(fd)))
        if den > 0:
            assert abs(a - fd) / den < 1e-4, (op, p)


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_ops_match_finite_differences(op):
    rng = np.random.default_rng(12)
    for a0, b0 in rng.uniform(-3, 3, (100, 2)):
        t = ad.Tape()
        a, b = scalar(t, a0), scalar(t, b0)
        ad.backward(t, ad.forward_op(op, [a, b]))
        fn = {"add": np.add, "sub": np.subtract, "mul": np.multiply}[op]
        fa = central_difference(lambda v: fn(v, b0), np.float64(a0))
        fb = central_difference(lambda v: fn(a0, v), np.float64(b0))
        for g, fd in ((float(a.grad), float(fa)), (float(b.grad), float(fb))):
            den = max(abs(g), abs(fd))
            assert den == 0 or abs(g - fd) / den < 1e-4


def test_matvec_matches_finite_differences():
    rng = np.random.default_rng(13)
    for _ in range(100):
        w0 = rng.uniform(-3, 3, (3, 4))
        x0 = rng.uniform(-3, 3, 4)
        c = rng.uniform(-1, 1, 3)
        t = ad.Tape()
        w, x = t.leaf(w0), t.leaf(x0)
        ad.backward(t, ad.total(ad.mul(ad.matvec(w, x), t.const(c))))
        np.testing.assert_allclose(w.grad, central_difference(lambda m: c @ (m @ x0), w0), rtol=1e-4, atol=1e-9)
        np.testing.assert_allclose(x.grad, central_difference(lambda v: c @ (w0 @ v), x0), rtol=1e-4, atol=1e-9)


def test_logit_gradient_and_clamp():
    t = ad.Tape()
    x = t.leaf([0.25, 0.0, 1.0])
    y = ad.logit(x)
    assert np.all(np.isfinite(y.data))
    ad.backward(t, ad.total(y))
    assert x.grad[0] == pytest.approx(1 / (0.25 * 0.75))
    assert x.grad[1] == 0.0 and x.grad[2] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_backward_is_deterministic(vals):
    def run():
        t = ad.Tape()
        x = t.leaf(vals)
        y = ad.total(ad.mul(ad.tanh(x), ad.logistic(x)))
        ad.backward(t, y)
        return x.grad.copy()

    assert run().tobytes() == run().tobytes()


def test_construction_order_is_topological():
    t = ad.Tape()
    x = scalar(t, 1.0)
    y = ad.tanh(ad.mul(x, x))
    for v in t.values:
        for parent, _ in v.parents:
            assert parent.id < v.id
    assert t.values[-1] is y
