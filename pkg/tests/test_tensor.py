"""Tests for the autodiff tensor engine."""

import numpy as np
import pytest

from mirrornet import tensor as T
from mirrornet.tensor import GradTape, ShapeError, Tensor, grad_check


def t(data, rg=False, dtype=np.float64):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=rg)


class TestElementwise:
    def test_add(self):
        out = T.add(t([1.0, 2.0]), t([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_scale_by_zero(self):
        out = T.scale(t([1.0, 2.0]), 0.0)
        np.testing.assert_array_equal(out.data, [0.0, 0.0])

    def test_mul(self):
        # hand arithmetic: [2*4, 3*5]
        out = T.mul(t([2.0, 3.0]), t([4.0, 5.0]))
        np.testing.assert_array_equal(out.data, [8.0, 15.0])

    def test_sub(self):
        out = T.sub(t([5.0, 1.0]), t([2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [3.0, -2.0])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            T.add(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))

    def test_scalar_operand(self):
        out = T.add(t([1.0, 2.0]), 1.5)
        np.testing.assert_array_equal(out.data, [2.5, 3.5])


class TestReduceMean:
    def test_mean_value(self):
        assert T.reduce_mean(t([2.0, 4.0, 6.0])).item() == 4.0

    def test_constant(self):
        assert T.reduce_mean(t([3.3] * 7)).item() == pytest.approx(3.3)

    def test_empty_raises(self):
        with pytest.raises(ShapeError):
            T.reduce_mean(t([]))

    def test_backward_grad_is_one_over_n(self):
        x = t([1.0, 2.0, 3.0, 4.0], rg=True)
        with GradTape() as tape:
            tape.backward(T.reduce_mean(x))
        np.testing.assert_allclose(x.grad, [0.25] * 4)


class TestBackward:
    def test_square_gradient(self):
        x = t([3.0], rg=True)
        with GradTape() as tape:
            loss = T.reduce_mean(T.mul(x, x))
            tape.backward(loss)
        np.testing.assert_allclose(x.grad, [6.0])

    def test_add_gradient_split(self):
        a = t([1.0, 2.0], rg=True)
        b = t([3.0, 4.0], rg=True)
        with GradTape() as tape:
            tape.backward(T.reduce_mean(T.add(a, b)))
        np.testing.assert_allclose(a.grad, [0.5, 0.5])
        np.testing.assert_allclose(b.grad, [0.5, 0.5])

    def test_non_scalar_loss_raises(self):
        x = t([1.0, 2.0], rg=True)
        with GradTape() as tape:
            y = T.mul(x, x)
            with pytest.raises(ShapeError):
                tape.backward(y)

    def test_grads_accumulate_without_reset(self):
        x = t([2.0], rg=True)
        with GradTape() as tape:
            loss = T.reduce_mean(T.mul(x, x))
            tape.backward(loss)
            tape.backward(loss)
        np.testing.assert_allclose(x.grad, [8.0])

    def test_reused_input_accumulates(self):
        x = t([1.0, -2.0], rg=True)
        with GradTape() as tape:
            # mean(x*x + x) -> grad = (2x + 1)/n
            y = T.add(T.mul(x, x), x)
            tape.backward(T.reduce_mean(y))
        np.testing.assert_allclose(x.grad, [(2 * 1.0 + 1) / 2, (2 * -2.0 + 1) / 2])

    def test_composite_chain_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = Tensor(rng.normal(size=(3, 4)), dtype=np.float64)

        def f(x):
            h = T.relu(T.add(T.mul(x, b), 0.3))
            return T.reduce_mean(T.mul(h, h))

        report = grad_check(f, Tensor(a, dtype=np.float64), tol=1e-4)
        assert report.passed, report

    def test_detach_blocks_gradient(self):
        x = t([2.0], rg=True)
        with GradTape() as tape:
            y = T.mul(x, x)
            z = T.reduce_mean(T.mul(y.detach(), x))
            tape.backward(z)
        # d/dx of const(4) * x = 4, not 12
        np.testing.assert_allclose(x.grad, [4.0])


class TestGradTape:
    def test_topological_order_asserted(self):
        x = t([1.0], rg=True)
        with GradTape() as tape:
            y = T.mul(x, x)
            z = T.add(y, x)
            T.reduce_mean(z)
        tape.check_topological()
        assert len(tape.records) == 3

    def test_no_recording_without_requires_grad(self):
        with GradTape() as tape:
            T.mul(t([1.0]), t([2.0]))
        assert tape.records == []

    def test_tapes_are_nested_per_thread(self):
        outer_x = t([1.0], rg=True)
        with GradTape() as outer:
            T.mul(outer_x, outer_x)
            with GradTape() as inner:
                T.mul(outer_x, outer_x)
            assert len(inner.records) == 1
        assert len(outer.records) == 1


class TestGradCheck:
    def test_mean_square_passes(self):
        f = lambda x: T.reduce_mean(T.mul(x, x))
        report = grad_check(f, Tensor(np.linspace(-1, 1, 10)), tol=1e-4)
        assert report.passed

    def test_wrong_gradient_rule_fails(self):
        # deliberately wrong backward rule: claims d(x^2) = 3x
        def bad_square(x):
            out = x.data * x.data
            return T.apply_op([x], out, lambda g, xd=x.data: (g * 3.0 * xd,), "bad")

        f = lambda x: T.reduce_mean(bad_square(x))
        report = grad_check(f, Tensor(np.linspace(0.5, 2.0, 5)), tol=1e-4)
        assert not report.passed

    def test_forward_deterministic(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(8, 8)))
        y1 = T.reduce_mean(T.mul(x, x)).item()
        y2 = T.reduce_mean(T.mul(x, x)).item()
        assert y1 == y2
