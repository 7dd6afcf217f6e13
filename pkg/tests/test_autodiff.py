"""Gradient checks for the autodiff engine.

Every differentiable op is verified against central finite differences
(h = 1e-5) on small random inputs. The oracle drives the op through a
scalar reduction so the gradient of interest is a full Jacobian-vector
product, not just a diagonal.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from padtts import autodiff as ad


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return g


def check_op(build, *input_shapes, rel_tol=1e-4, rng=None):
    """Compare autodiff grads of scalar build(*tensors) against finite differences.

    build receives Tensor inputs and must return a scalar Tensor.
    """
    rng = rng or np.random.default_rng(0)
    arrays = [rng.standard_normal(s) for s in input_shapes]
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    ad.backward(loss)
    for i, (arr, ten) in enumerate(zip(arrays, tensors)):

        def f(x, i=i):
            probe = [a.copy() for a in arrays]
            probe[i] = x
            val = build(*[ad.Tensor(p) for p in probe])
            return float(val.data)

        want = fd_grad(f, arr.copy())
        got = ten.grad
        assert got is not None, f"input {i} got no gradient"
        denom = max(np.abs(want).max(), np.abs(got).max(), 1e-8)
        rel = np.abs(got - want).max() / denom
        assert rel < rel_tol, f"input {i}: rel err {rel:.2e}"


def ssum(t):
    """Reduce any tensor to a scalar via a weighted sum (fixed weights)."""
    flat = ad.reshape(t, (-1,))
    w = np.linspace(0.5, 1.5, flat.data.size)
    return ad.matmul(flat, ad.constant(w.reshape(-1, 1)))[0]


class TestElementwiseGrads:
    def test_add(self):
        check_op(lambda a, b: ssum(ad.add(a, b)), (3, 4), (3, 4))

    def test_sub(self):
        check_op(lambda a, b: ssum(ad.sub(a, b)), (3, 4), (3, 4))

    def test_mul(self):
        check_op(lambda a, b: ssum(ad.mul(a, b)), (3, 4), (3, 4))

    def test_neg(self):
        check_op(lambda a: ssum(ad.neg(a)), (5,))

    def test_scale(self):
        check_op(lambda a: ssum(ad.scale(a, -2.5)), (4, 3))

    def test_relu(self):
        # keep inputs away from the kink where finite differences lie
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 4))
        a[np.abs(a) < 0.05] = 0.1
        t = ad.Tensor(a.copy(), requires_grad=True)
        loss = ssum(ad.relu(t))
        ad.backward(loss)
        want = fd_grad(lambda x: float(ssum(ad.relu(ad.Tensor(x))).data), a.copy())
        rel = np.abs(t.grad - want).max() / max(np.abs(want).max(), 1e-8)
        assert rel < 1e-4

    def test_relu_zero_input_zero_grad(self):
        t = ad.Tensor(np.zeros((3,)), requires_grad=True)
        ad.backward(ssum(ad.relu(t)))
        assert np.all(t.grad == 0.0)

    def test_tanh(self):
        check_op(lambda a: ssum(ad.tanh(a)), (3, 5))

    def test_sigmoid(self):
        check_op(lambda a: ssum(ad.sigmoid(a)), (3, 5))

    def test_softmax(self):
        check_op(lambda a: ssum(ad.softmax(a)), (4, 6))

    def test_softmax_rows_sum_to_one(self):
        x = ad.Tensor(np.random.default_rng(2).standard_normal((5, 7)))
        out = ad.softmax(x)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


class TestMatmulGrads:
    def test_2d_2d(self):
        check_op(lambda a, b: ssum(ad.matmul(a, b)), (3, 4), (4, 5))

    def test_1d_2d(self):
        check_op(lambda a, b: ssum(ad.matmul(a, b)), (4,), (4, 5))

    def test_3d_2d(self):
        check_op(lambda a, b: ssum(ad.matmul(a, b)), (2, 3, 4), (4, 5))

    def test_3d_3d_batched(self):
        check_op(lambda a, b: ssum(ad.matmul(a, b)), (2, 3, 4), (2, 4, 5))

    def test_inner_dim_mismatch_raises(self):
        a = ad.Tensor(np.zeros((3, 4)))
        b = ad.Tensor(np.zeros((5, 6)))
        with pytest.raises(ad.ShapeMismatch) as e:
            ad.matmul(a, b)
        assert "matmul" in str(e.value)
        assert "(3, 4)" in str(e.value) and "(5, 6)" in str(e.value)

    def test_batch_dim_mismatch_raises(self):
        with pytest.raises(ad.ShapeMismatch):
            ad.matmul(ad.Tensor(np.zeros((2, 3, 4))), ad.Tensor(np.zeros((3, 4, 5))))


class TestStructuralGrads:
    def test_concat_last_axis(self):
        check_op(lambda a, b: ssum(ad.concat([a, b], axis=-1)), (3, 2), (3, 4))

    def test_concat_axis0(self):
        check_op(lambda a, b: ssum(ad.concat([a, b], axis=0)), (2, 3), (4, 3))

    def test_concat_shape_mismatch(self):
        with pytest.raises(ad.ShapeMismatch):
            ad.concat([ad.Tensor(np.zeros((3, 2))), ad.Tensor(np.zeros((4, 2)))], axis=-1)

    def test_slice(self):
        check_op(lambda a: ssum(a[1:3, ::2]), (4, 6))

    def test_slice_int_index(self):
        check_op(lambda a: ssum(a[2]), (4, 3))

    def test_repeated_fancy_index_accumulates(self):
        """An embedding-style lookup of a repeated row sums both paths."""
        check_op(lambda a: ssum(ad.take(a, np.array([1, 1, 2]))), (4, 3))

    def test_reshape(self):
        check_op(lambda a: ssum(ad.reshape(a, (6, 2))), (3, 4))

    def test_repeat(self):
        check_op(lambda a: ssum(ad.repeat(a, 3, axis=1)), (2, 2))

    def test_flip(self):
        check_op(lambda a: ssum(ad.flip(a, axis=0)), (4, 3))

    def test_conv1d(self):
        check_op(lambda x, k: ssum(ad.conv1d(x, k)), (2, 7, 3), (5, 3, 4))

    def test_conv1d_same_length(self):
        out = ad.conv1d(ad.Tensor(np.zeros((1, 9, 2))), ad.Tensor(np.zeros((5, 2, 3))))
        assert out.data.shape == (1, 9, 3)

    def test_conv1d_channel_mismatch(self):
        with pytest.raises(ad.ShapeMismatch):
            ad.conv1d(ad.Tensor(np.zeros((1, 9, 2))), ad.Tensor(np.zeros((5, 3, 3))))


class TestLossGrads:
    def test_l1_unweighted(self):
        # keep |pred - target| away from zero for a clean finite difference
        rng = np.random.default_rng(3)
        p = rng.standard_normal((4, 5)) + 3.0
        t = rng.standard_normal((4, 5)) - 3.0
        pt = ad.Tensor(p.copy(), requires_grad=True)
        tt = ad.Tensor(t.copy(), requires_grad=True)
        loss = ad.l1_loss(pt, tt)
        ad.backward(loss)
        want_p = fd_grad(lambda x: float(ad.l1_loss(ad.Tensor(x), ad.Tensor(t)).data), p.copy())
        want_t = fd_grad(lambda x: float(ad.l1_loss(ad.Tensor(p), ad.Tensor(x)).data), t.copy())
        assert np.abs(pt.grad - want_p).max() < 1e-6
        assert np.abs(tt.grad - want_t).max() < 1e-6

    def test_l1_weighted(self):
        rng = np.random.default_rng(4)
        p = rng.standard_normal((3, 4)) + 2.0
        t = np.zeros((3, 4))
        w = rng.random((3, 4)) + 0.1
        pt = ad.Tensor(p.copy(), requires_grad=True)
        loss = ad.l1_loss(pt, ad.Tensor(t), weights=w)
        ad.backward(loss)
        want = fd_grad(lambda x: float(ad.l1_loss(ad.Tensor(x), ad.Tensor(t), weights=w).data), p.copy())
        assert np.abs(pt.grad - want).max() < 1e-6

    def test_l1_weighted_value(self):
        p = np.array([[1.0, 2.0]])
        t = np.array([[0.0, 0.0]])
        w = np.array([[1.0, 3.0]])
        loss = ad.l1_loss(ad.Tensor(p), ad.Tensor(t), weights=w)
        assert abs(float(loss.data) - (1.0 + 6.0) / 4.0) < 1e-12

    def test_l1_shape_mismatch(self):
        with pytest.raises(ad.ShapeMismatch):
            ad.l1_loss(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((3, 2))))


class TestComposedNetwork:
    def test_two_layer_tanh_network(self):
        """End-to-end gradient check through a small composed graph."""

        def net(x, w1, b1, w2):
            h = ad.tanh(ad.add(ad.matmul(x, w1), ad.repeat(ad.reshape(b1, (1, -1)), x.data.shape[0], axis=0)))
            y = ad.matmul(h, w2)
            return ssum(ad.relu(y))

        rng = np.random.default_rng(5)
        check_op(net, (4, 3), (3, 6), (6,), (6, 2), rng=rng)

    def test_shared_input_fan_out(self):
        """A tensor used twice accumulates both contributions in one pass."""

        def f(a):
            return ssum(ad.add(ad.mul(a, a), ad.tanh(a)))

        check_op(f, (3, 3))

    def test_rnn_style_recurrence(self):
        """Gradient through a 12-step unrolled recurrence (deep chain)."""

        def f(w, x):
            h = ad.constant(np.zeros(4))
            for t in range(12):
                h = ad.tanh(ad.add(ad.matmul(h, w), x[t]))
            return ssum(h)

        check_op(f, (4, 4), (12, 4))


class TestBackwardSemantics:
    def test_backward_requires_scalar(self):
        t = ad.Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            ad.backward(ad.relu(t))

    def test_deep_graph_no_recursion_limit(self):
        """Thousands of chained ops must not hit the interpreter stack."""
        t = ad.Tensor(np.ones(3), requires_grad=True)
        out = t
        for _ in range(5000):
            out = ad.scale(out, 1.0)
        ad.backward(ssum(out))
        assert t.grad is not None

    @given(st.integers(min_value=1, max_value=4))
    @settings(max_examples=10, deadline=None)
    def test_repeated_backward_accumulates_exact_multiples(self, n):
        t = ad.Tensor(np.random.default_rng(6).standard_normal((3, 3)), requires_grad=True)
        loss = ssum(ad.tanh(t))
        ad.backward(loss)
        once = t.grad.copy()
        for _ in range(n):
            ad.backward(loss)
        np.testing.assert_array_equal(t.grad, once * (n + 1))

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_forward_backward_deterministic(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((4, 4))
        grads = []
        for _ in range(2):
            t = ad.Tensor(a.copy(), requires_grad=True)
            ad.backward(ssum(ad.softmax(ad.tanh(ad.matmul(t, t)))))
            grads.append(t.grad.copy())
        np.testing.assert_array_equal(grads[0], grads[1])

    def test_grad_none_until_backward(self):
        t = ad.Tensor(np.ones(2), requires_grad=True)
        assert t.grad is None
        ad.backward(ssum(t))
        assert t.grad is not None


class TestDropout:
    def test_inference_is_identity(self):
        x = ad.Tensor(np.random.default_rng(7).standard_normal((4, 4)))
        assert ad.dropout(x, 0.5, None) is x

    def test_same_key_same_mask(self):
        x = np.random.default_rng(8).standard_normal((64, 64))
        outs = []
        for _ in range(2):
            rng = ad.DropoutRng(seed=9, step=3)
            outs.append(ad.dropout(ad.Tensor(x), 0.5, rng).data)
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_different_step_different_mask(self):
        x = np.ones((64, 64))
        a = ad.dropout(ad.Tensor(x), 0.5, ad.DropoutRng(seed=9, step=3)).data
        b = ad.dropout(ad.Tensor(x), 0.5, ad.DropoutRng(seed=9, step=4)).data
        assert not np.array_equal(a, b)

    def test_successive_calls_differ(self):
        x = np.ones((64, 64))
        rng = ad.DropoutRng(seed=1, step=0)
        a = ad.dropout(ad.Tensor(x), 0.5, rng).data
        b = ad.dropout(ad.Tensor(x), 0.5, rng).data
        assert not np.array_equal(a, b)

    def test_kept_entries_scaled(self):
        x = np.ones((128, 128))
        out = ad.dropout(ad.Tensor(x), 0.25, ad.DropoutRng(seed=2, step=0)).data
        vals = np.unique(np.round(out, 12))
        assert set(vals.tolist()) <= {0.0, round(1 / 0.75, 12)}

    def test_grad_uses_same_mask(self):
        x = ad.Tensor(np.ones((8, 8)), requires_grad=True)
        out = ad.dropout(x, 0.5, ad.DropoutRng(seed=3, step=1))
        ad.backward(ssum(out))
        # gradient is zero exactly where output was dropped
        np.testing.assert_array_equal(x.grad == 0.0, out.data == 0.0)


class TestOptimizers:
    def test_sgd_step(self):
        p = ad.Parameter("w", np.array([1.0, 2.0]))
        p.tensor.grad = np.array([0.5, -1.0])
        ad.SGD([p], lr=0.1).step()
        np.testing.assert_allclose(p.data, [0.95, 2.1])

    def test_adam_first_step_is_lr_sized(self):
        """With bias correction, step 1 moves each coord by ~lr * sign(g)."""
        p = ad.Parameter("w", np.array([1.0, -2.0, 3.0]))
        p.tensor.grad = np.array([0.3, -0.7, 2.0])
        opt = ad.Adam([p], lr=0.01)
        opt.step()
        expected = np.array([1.0, -2.0, 3.0]) - 0.01 * np.sign([0.3, -0.7, 2.0])
        np.testing.assert_allclose(p.data, expected, atol=1e-7)

    def test_adam_two_steps_hand_computed(self):
        p = ad.Parameter("w", np.array([0.0]))
        opt = ad.Adam([p], lr=0.1, betas=(0.9, 0.999), eps=1e-8)
        m = v = 0.0
        x = 0.0
        for t, g in [(1, 0.4), (2, -0.2)]:
            p.tensor.grad = np.array([g])
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            p.tensor.grad = None
        np.testing.assert_allclose(p.data, [x], atol=1e-12)

    def test_frozen_parameter_bit_identical(self):
        data = np.random.default_rng(10).standard_normal((3, 3))
        p = ad.Parameter("frozen", data.copy(), frozen=True)
        q = ad.Parameter("live", data.copy())
        q.tensor.grad = np.ones((3, 3))
        for opt in (ad.Adam([p, q], lr=0.1), ad.SGD([p, q], lr=0.1)):
            opt.step()
        assert p.data.tobytes() == data.tobytes()
        assert q.data.tobytes() != data.tobytes()

    def test_missing_grad_raises(self):
        p = ad.Parameter("w", np.zeros(2))
        with pytest.raises(ad.MissingGradient, match="w"):
            ad.Adam([p]).step()
        with pytest.raises(ad.MissingGradient, match="w"):
            ad.SGD([p], lr=0.1).step()

    def test_clip_gradients(self):
        p = ad.Parameter("w", np.zeros(2))
        p.tensor.grad = np.array([3.0, 4.0])
        norm = ad.clip_gradients([p], max_norm=1.0)
        assert abs(norm - 5.0) < 1e-12
        np.testing.assert_allclose(np.linalg.norm(p.tensor.grad), 1.0)

    def test_clip_below_threshold_untouched(self):
        p = ad.Parameter("w", np.zeros(2))
        p.tensor.grad = np.array([0.3, 0.4])
        ad.clip_gradients([p], max_norm=1.0)
        np.testing.assert_array_equal(p.tensor.grad, [0.3, 0.4])
