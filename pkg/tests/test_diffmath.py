"""Autodiff kernel: forward values, gradients against central differences, Adam."""

import math

import numpy as np
import pytest

from simsum import diffmath as dm
from simsum.diffmath import AdamState, Tensor, adam_step, grad_check


def t(values, grad=True):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=grad)


class TestForward:
    def test_relu_forward_and_backward(self):
        x = t([-1.0, 2.0])
        out = dm.relu(x)
        assert out.values.tolist() == [0.0, 2.0]
        out._backward(np.array([1.0, 1.0]))
        assert x.grad.tolist() == [0.0, 1.0]

    def test_relu_subgradient_at_zero_is_zero(self):
        x = t([0.0])
        out = dm.relu(x)
        out._backward(np.array([1.0]))
        assert x.grad.tolist() == [0.0]

    def test_sigmoid_at_zero(self):
        assert dm.sigmoid(t([0.0])).values[0] == 0.5

    def test_sigmoid_stable_for_large_negative(self):
        out = dm.sigmoid(t([-800.0, 800.0]))
        assert out.values[0] == 0.0 and out.values[1] == 1.0

    def test_softmax_of_equal_values(self):
        out = dm.softmax(t([3.7, 3.7, 3.7]))
        np.testing.assert_allclose(out.values, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_softmax_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            dm.softmax(t([np.inf, 0.0]))

    def test_matmul_with_vector(self):
        out = dm.matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([1.0, 1.0]))
        assert out.values.tolist() == [3.0, 7.0]

    def test_shape_mismatch_errors_name_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2,\) vs \(3,\)"):
            dm.add(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))
        with pytest.raises(ValueError, match=r"\(2, 2\) vs \(3, 2\)"):
            dm.matmul(t(np.ones((2, 2))), t(np.ones((3, 2))))

    def test_forward_is_deterministic(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(6, 6))
        b = rng.normal(size=(6, 6))
        first = dm.matmul(dm.tanh(Tensor(a)), Tensor(b)).values
        second = dm.matmul(dm.tanh(Tensor(a)), Tensor(b)).values
        assert np.array_equal(first, second)


class TestGradCheck:
    def test_quadratic(self):
        x = t([1.0, 2.0])
        err = grad_check(lambda ts: dm.dot(ts[0], ts[0]), [x])
        assert err <= 1e-6

    def test_relu_sum_away_from_kink(self):
        x = t([3.0, -3.0])
        err = grad_check(lambda ts: dm.sum_all(dm.relu(ts[0])), [x])
        assert err <= 1e-6

    def test_rejects_non_finite_output(self):
        x = t([0.0])
        with pytest.raises(FloatingPointError):
            grad_check(lambda ts: dm.log(dm.sum_all(ts[0])), [x])

    @pytest.mark.parametrize("seed", range(10))
    def test_every_primitive(self, seed):
        rng = np.random.default_rng(seed)

        def rt(*shape):
            return Tensor(rng.normal(size=shape), requires_grad=True)

        mask = Tensor(rng.normal(size=(4,)))
        cases = [
            (lambda ts: dm.sum_all(dm.add(ts[0], ts[1])), [rt(3, 4), rt(3, 4)]),
            (lambda ts: dm.sum_all(dm.add(ts[0], ts[1])), [rt(3, 4), rt(4)]),  # bias broadcast
            (lambda ts: dm.sum_all(dm.sub(ts[0], ts[1])), [rt(3, 4), rt(3, 4)]),
            (lambda ts: dm.sum_all(dm.mul(ts[0], ts[1])), [rt(3, 4), rt(3, 4)]),
            (lambda ts: dm.sum_all(dm.scale(ts[0], -2.5)), [rt(5)]),
            (lambda ts: dm.sum_all(dm.matmul(ts[0], ts[1])), [rt(3, 4), rt(4, 2)]),
            (lambda ts: dm.sum_all(dm.matmul(ts[0], ts[1])), [rt(3, 4), rt(4)]),
            (lambda ts: dm.sum_all(dm.transpose(ts[0])), [rt(3, 4)]),
            (lambda ts: dm.dot(ts[0], ts[1]), [rt(6), rt(6)]),
            (lambda ts: dm.sum_all(dm.row_mean(ts[0])), [rt(5, 3)]),
            (lambda ts: dm.sum_all(dm.mul(dm.relu(ts[0]), ts[0])), [rt(4, 4)]),
            (lambda ts: dm.sum_all(dm.sigmoid(ts[0])), [rt(7)]),
            (lambda ts: dm.sum_all(dm.tanh(ts[0])), [rt(7)]),
            (lambda ts: dm.sum_all(dm.exp(ts[0])), [rt(5)]),
            (lambda ts: dm.sum_all(dm.log(dm.exp(ts[0]))), [rt(5)]),
            (lambda ts: dm.dot(dm.softmax(ts[0]), mask), [rt(4)]),
            (lambda ts: dm.sum_all(dm.gather(ts[0], [0, 2, 2, 1])), [rt(4, 3)]),
            (lambda ts: dm.sum_all(dm.mul(dm.stack_rows([ts[0], ts[1], ts[0]]),
                                          dm.stack_rows([ts[1], ts[0], ts[1]]))),
             [rt(4), rt(4)]),
            (lambda ts: dm.dot(dm.take_row(ts[0], 1), dm.take_row(ts[0], 2)), [rt(4, 3)]),
        ]
        for fn, inputs in cases:
            assert grad_check(fn, inputs) <= 1e-6

    def test_backward_linearity(self):
        # grad of (f + g) equals grad f + grad g, to 1e-12
        rng = np.random.default_rng(11)
        base = rng.normal(size=(4, 4))

        def build():
            x = Tensor(base.copy(), requires_grad=True)
            f = dm.sum_all(dm.mul(dm.tanh(x), x))
            g = dm.dot(dm.take_row(x, 0), dm.take_row(x, 3))
            return x, f, g

        x, f, g = build()
        dm.add(f, g).backward()
        combined = x.grad.copy()

        x1, f1, _ = build()
        f1.backward()
        x2, _, g2 = build()
        g2.backward()
        np.testing.assert_allclose(combined, x1.grad + x2.grad, atol=1e-12)

    def test_grad_accumulates_across_reuse(self):
        x = t([2.0])
        y = dm.add(x, x)
        dm.sum_all(y).backward()
        assert x.grad.tolist() == [2.0]


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = t([1.0, -2.0])
        p.grad = np.zeros(2)
        state = AdamState(lr=0.1)
        adam_step({"p": p}, state)
        assert p.values.tolist() == [1.0, -2.0]
        assert state.t == 1

    def test_single_step_hand_value(self):
        # param 0, g=1, lr=0.1: bias-corrected m_hat = v_hat = 1,
        # update = -0.1 / (1 + 1e-8)
        p = t([0.0])
        p.grad = np.array([1.0])
        adam_step({"p": p}, AdamState(lr=0.1))
        expected = -0.1 / (1.0 + 1e-8)
        assert abs(p.values[0] - expected) < 1e-15
        assert abs(p.values[0] + 0.1) < 1e-8

    def test_constant_gradient_displacement_approaches_lr(self):
        p = t([0.0])
        state = AdamState(lr=1e-3)
        previous = 0.0
        for _ in range(1000):
            p.grad = np.array([1.0])
            adam_step({"p": p}, state)
            displacement = abs(p.values[0] - previous)
            previous = p.values[0]
        assert abs(displacement - state.lr) / state.lr < 0.10

    def test_non_finite_gradient_raises(self):
        p = t([0.0])
        p.grad = np.array([np.nan])
        with pytest.raises(FloatingPointError, match="non-finite"):
            adam_step({"p": p}, AdamState())

    def test_moments_match_param_shapes(self):
        p = t(np.ones((2, 3)))
        p.grad = np.ones((2, 3))
        state = AdamState()
        adam_step({"p": p}, state)
        assert state.m["p"].shape == (2, 3) and state.v["p"].shape == (2, 3)


class TestBackwardContract:
    def test_backward_requires_scalar(self):
        x = t([1.0, 2.0])
        with pytest.raises(ValueError, match="scalar"):
            dm.relu(x).backward()

    def test_constant_graph_records_nothing(self):
        a = Tensor([1.0, 2.0])
        out = dm.relu(a)
        assert out._backward is None and not out.requires_grad
