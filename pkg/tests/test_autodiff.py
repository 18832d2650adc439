import numpy as np
import pytest

from gofa.autodiff import (
    NonFiniteError,
    ShapeError,
    Tensor,
    concat,
    cross_entropy,
    cross_entropy_sum,
    gather_rows,
    global_grad_norm,
    no_grad,
    rms_norm,
    segment_sum,
    softmax,
)

from conftest import assert_grad_close, finite_difference


def check_op(build, tensors, max_coords=None, rng=None, rel_tol=1e-4):
    """FD-check the scalar produced by ``build()`` against every tensor."""
    loss = build()
    loss.backward()
    grads = [t.grad.copy() for t in tensors]
    for ti, c, fd in finite_difference(lambda: build().item(), tensors, max_coords=max_coords, rng=rng):
        assert_grad_close(grads[ti].reshape(-1)[c], fd, rel_tol=rel_tol)


class TestBasicOps:
    def test_identity_matmul(self, rng):
        x = Tensor(rng.normal(size=(3, 3)))
        eye = Tensor(np.eye(3))
        assert np.allclose((x @ eye).data, x.data)

    def test_matmul_shapes(self, rng):
        a = Tensor(rng.normal(size=(2, 3)))
        b = Tensor(rng.normal(size=(3, 4)))
        assert (a @ b).shape == (2, 4)
        with pytest.raises(ShapeError, match="2, 3"):
            _ = a @ Tensor(rng.normal(size=(2, 3)))

    def test_matmul_gradient_vs_fd(self, rng):
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        up = Tensor(rng.normal(size=(2, 4)))
        check_op(lambda: ((x @ w) * up).sum(), [x, w])

    def test_matmul_grad_wrt_w_is_xT_upstream(self, rng):
        x = Tensor(rng.normal(size=(5, 3)))
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        up = rng.normal(size=(5, 2))
        loss = ((x @ w) * Tensor(up)).sum()
        loss.backward()
        assert np.allclose(w.grad, x.data.T @ up, rtol=1e-12)

    def test_batched_matmul_gradient(self, rng):
        a = Tensor(rng.normal(size=(4, 2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 5)), requires_grad=True)  # broadcast over batch
        up = Tensor(rng.normal(size=(4, 2, 5)))
        check_op(lambda: ((a @ b) * up).sum(), [a, b])

    def test_elementwise_and_broadcast_gradients(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4,)), requires_grad=True)
        check_op(lambda: ((a * b + b) * (a - 2.0)).sum(), [a, b])

    def test_div_pow_gradients(self, rng):
        a = Tensor(rng.normal(size=(6,)) + 3.0, requires_grad=True)
        b = Tensor(rng.normal(size=(6,)) + 3.0, requires_grad=True)
        check_op(lambda: ((a / b) ** 2).sum(), [a, b])

    def test_nonlinearity_gradients(self, rng):
        x = Tensor(rng.normal(size=(8,)), requires_grad=True)
        check_op(lambda: (x.tanh() + x.silu() + (x * x + 1.0).log() + (0.1 * x).exp()).sum(), [x])

    def test_square_derivative(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        (x**2).sum().backward()
        assert np.allclose(x.grad, [6.0])

    def test_slice_concat_transpose_gradients(self, rng):
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)

        def build():
            top = x[:2]
            bottom = x[2:]
            y = concat([top.transpose(1, 0), bottom.transpose(1, 0)], axis=1)
            return (y * y).sum()

        check_op(build, [x])

    def test_gather_segment_gradients(self, rng):
        x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        idx = np.array([0, 2, 2, 4])
        seg = np.array([0, 1, 1, 0])

        def build():
            rows = gather_rows(x, idx)
            pooled = segment_sum(rows * rows, seg, 2)
            return pooled.sum()

        check_op(build, [x])

    def test_mean_and_sum_axis(self, rng):
        x = Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
        check_op(lambda: (x.mean(axis=1).sum(axis=0, keepdims=True) ** 2).sum(), [x])

    def test_broadcast_to_gradient(self, rng):
        x = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
        up = Tensor(rng.normal(size=(3, 4)))
        check_op(lambda: (x.broadcast_to((3, 4)) * up).sum(), [x])


class TestSoftmax:
    def test_uniform_logits(self):
        out = softmax(Tensor(np.zeros((2, 5))), axis=-1)
        assert np.allclose(out.data, 0.2)

    def test_analytic_two_entry(self):
        out = softmax(Tensor(np.array([0.0, np.log(3.0)])), axis=-1)
        assert np.allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        out = softmax(Tensor(rng.normal(size=(7, 9)) * 30), axis=-1)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_gradient_vs_fd(self, rng):
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        up = Tensor(rng.normal(size=(3, 5)))
        check_op(lambda: (softmax(x, axis=-1) * up).sum(), [x])


class TestRmsNorm:
    def test_constant_vector(self):
        gain = Tensor(np.full(4, 2.0))
        x = Tensor(np.full((1, 4), 3.0))
        out = rms_norm(x, gain)
        # rms of a constant vector c is |c|, so output is gain * sign(c).
        assert np.allclose(out.data, 2.0, atol=1e-6)

    def test_zero_input_uses_epsilon(self):
        out = rms_norm(Tensor(np.zeros((2, 8))), Tensor(np.ones(8)))
        assert np.all(np.isfinite(out.data))
        assert np.allclose(out.data, 0.0)

    def test_gradient_vs_fd(self, rng):
        x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        g = Tensor(rng.normal(size=(6,)) + 1.0, requires_grad=True)
        up = Tensor(rng.normal(size=(3, 6)))
        check_op(lambda: (rms_norm(x, g) * up).sum(), [x, g])

    def test_gradient_vs_fd_3d(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        g = Tensor(rng.normal(size=(4,)) + 1.0, requires_grad=True)
        up = Tensor(rng.normal(size=(2, 3, 4)))
        check_op(lambda: (rms_norm(x, g) * up).sum(), [x, g])


class TestCrossEntropy:
    def test_uniform_logits_value(self):
        logits = Tensor(np.zeros((3, 16)))
        loss = cross_entropy(logits, np.array([1, 5, 9]))
        assert np.allclose(loss.item(), np.log(16.0), atol=1e-12)

    def test_confident_correct_near_zero(self):
        logits = np.zeros((2, 8))
        logits[0, 3] = 50.0
        logits[1, 1] = 50.0
        loss = cross_entropy(Tensor(logits), np.array([3, 1]))
        assert loss.item() < 1e-6

    def test_ignore_index(self):
        logits = Tensor(np.zeros((4, 4)))
        total, count = cross_entropy_sum(logits, np.array([0, -100, 2, -100]))
        assert count == 2
        assert np.allclose(total.item(), 2 * np.log(4.0))

    def test_empty_batch_errors(self):
        with pytest.raises(ShapeError):
            cross_entropy(Tensor(np.zeros((2, 4))), np.array([-100, -100]))

    def test_out_of_vocab_errors(self):
        with pytest.raises(ShapeError):
            cross_entropy(Tensor(np.zeros((1, 4))), np.array([4]))

    def test_gradient_vs_fd(self, rng):
        x = Tensor(rng.normal(size=(4, 16)), requires_grad=True)
        targets = np.array([3, -100, 7, 11])
        check_op(lambda: cross_entropy(x, targets), [x])


class TestBackward:
    def test_chain_of_ten_layers_vs_fd(self, rng):
        x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        ws = [Tensor(rng.normal(size=(4, 4)) * 0.5, requires_grad=True) for _ in range(10)]

        def build():
            h = x
            for w in ws:
                h = (h @ w).tanh()
            return (h * h).sum()

        check_op(build, [x] + ws, max_coords=4, rng=rng)

    def test_unreachable_parameter_grad_stays_none(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        unused = Tensor(rng.normal(size=(3,)), requires_grad=True)
        (x * x).sum().backward()
        assert x.grad is not None
        assert unused.grad is None

    def test_non_scalar_backward_rejected(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        with pytest.raises(ShapeError):
            (x * 2.0).backward()

    def test_grad_accumulates_across_backwards(self, rng):
        x = Tensor(np.array([2.0]), requires_grad=True)
        (x * x).sum().backward()
        first = x.grad.copy()
        (x * x).sum().backward()
        assert np.allclose(x.grad, 2 * first)

    def test_deterministic_gradients(self, rng):
        data = rng.normal(size=(6, 6))
        grads = []
        for _ in range(2):
            x = Tensor(data.copy(), requires_grad=True)
            (softmax(x @ x, axis=-1)).sum().backward()
            grads.append(x.grad.copy())
        assert np.array_equal(grads[0], grads[1])

    def test_shared_subexpression(self, rng):
        x = Tensor(np.array([1.5]), requires_grad=True)
        y = x * x  # used twice
        (y + y).sum().backward()
        assert np.allclose(x.grad, [2 * 2 * 1.5])


class TestUtilities:
    def test_no_grad_suppresses_tape(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert not y.requires_grad

    def test_validate_finite(self):
        t = Tensor(np.array([1.0, np.nan]))
        with pytest.raises(NonFiniteError, match="bad_tensor"):
            t.validate_finite("bad_tensor")
        Tensor(np.array([1.0])).validate_finite()

    def test_global_grad_norm(self, rng):
        a = Tensor(np.array([3.0]), requires_grad=True)
        b = Tensor(np.array([4.0]), requires_grad=True)
        ((a * a) * 0.5 + (b * b) * 0.5).sum().backward()
        assert np.allclose(global_grad_norm([a, b]), 5.0)

    def test_float32_opt_in(self):
        t = Tensor(np.zeros(3), dtype=np.float32)
        assert t.dtype == np.float32
