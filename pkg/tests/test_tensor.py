import math

import numpy as np
import pytest

from textfusion import tensor as T
from textfusion.errors import ShapeError, TapeError
from textfusion.gradcheck import check_gradients, finite_difference, relative_error


def leaf(data):
    return T.Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        a = T.Tensor(np.eye(2))
        b = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(T.matmul(a, b).data, b.data)

    def test_hand_product(self):
        # [[1,2]] @ [[3],[4]] = [[1*3 + 2*4]] = [[11]]
        out = T.matmul(T.Tensor([[1.0, 2.0]]), T.Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_zero_annihilates(self):
        a = T.Tensor(np.random.default_rng(0).uniform(-1, 1, (3, 4)))
        z = T.Tensor(np.zeros((4, 2)))
        assert np.array_equal(T.matmul(a, z).data, np.zeros((3, 2)))

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeError) as e:
            T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))
        assert "(2, 3)" in str(e.value)

    def test_associativity(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.uniform(-1, 1, (4, 5))
            b = rng.uniform(-1, 1, (5, 6))
            c = rng.uniform(-1, 1, (6, 3))
            left = (a @ b) @ c
            right = a @ (b @ c)
            assert relative_error(left, right) < 1e-9

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(-1, 1, (3, 2, 4))
        b = rng.uniform(-1, 1, (3, 4, 5))
        w = rng.uniform(-1, 1, (4, 5))
        out = T.matmul(T.Tensor(a), T.Tensor(b)).data
        out2 = T.matmul(T.Tensor(a), T.Tensor(w)).data
        for i in range(3):
            assert np.allclose(out[i], a[i] @ b[i])
            assert np.allclose(out2[i], a[i] @ w)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax_lastdim(T.Tensor([0.0, 0.0]))
        assert np.allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_large_values_no_overflow(self):
        out = T.softmax_lastdim(T.Tensor([1000.0, 0.0])).data
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0, abs=1e-300)

    def test_log_ratio(self):
        out = T.softmax_lastdim(T.Tensor([math.log(1), math.log(2), math.log(3)]))
        assert np.allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-15)

    def test_rows_sum_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.uniform(-5, 5, (4, 6))
            y = T.softmax_lastdim(T.Tensor(x)).data
            assert np.all(np.abs(y.sum(axis=-1) - 1.0) <= 1e-12)
            assert np.all(y > 0)
            shifted = T.softmax_lastdim(T.Tensor(x + 13.7)).data
            assert np.allclose(y, shifted, atol=1e-12)


class TestLayerNorm:
    def test_constant_slice_is_zero(self):
        out = T.layer_norm(T.Tensor([5.0, 5.0, 5.0]), T.Tensor(np.ones(3)),
                           T.Tensor(np.zeros(3)), eps=1e-5)
        assert np.allclose(out.data, 0.0)

    def test_two_point_slice(self):
        # mean 2, population std 1 -> normalized [-1, 1] as eps -> 0
        out = T.layer_norm(T.Tensor([1.0, 3.0]), T.Tensor(np.ones(2)),
                           T.Tensor(np.zeros(2)), eps=1e-14)
        assert np.allclose(out.data, [-1.0, 1.0], atol=1e-7)

    def test_zero_gain_gives_bias(self):
        bias = np.array([1.0, -2.0, 0.5])
        out = T.layer_norm(T.Tensor(np.random.default_rng(0).normal(size=(4, 3))),
                           T.Tensor(np.zeros(3)), T.Tensor(bias), eps=1e-5)
        assert np.allclose(out.data, np.broadcast_to(bias, (4, 3)))

    def test_normalization_stats(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(-2, 2, (5, 8))
        out = T.layer_norm(T.Tensor(x), T.Tensor(np.ones(8)), T.Tensor(np.zeros(8)),
                           eps=1e-12).data
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        assert np.allclose(out.var(axis=-1), 1.0, atol=1e-6)

    def test_nonpositive_eps_rejected(self):
        with pytest.raises(ShapeError):
            T.layer_norm(T.Tensor([1.0, 2.0]), T.Tensor(np.ones(2)),
                         T.Tensor(np.zeros(2)), eps=0.0)


class TestMeanAxis:
    def test_row_mean(self):
        out = T.mean_axis(T.Tensor([[1.0, 3.0], [3.0, 5.0]]), axis=0)
        assert out.data.tolist() == [2.0, 4.0]

    def test_single_row_identity(self):
        out = T.mean_axis(T.Tensor([[1.5, -2.0, 7.0]]), axis=0)
        assert out.data.tolist() == [1.5, -2.0, 7.0]

    def test_hand_mean(self):
        out = T.mean_axis(T.Tensor([[0.0, 0.0], [2.0, 4.0], [4.0, 2.0]]), axis=0)
        assert out.data.tolist() == [2.0, 2.0]

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            T.mean_axis(T.Tensor([[1.0]]), axis=2)


class TestElementwise:
    def test_add_zero_and_mul_one(self):
        a = T.Tensor([1.0, -2.0, 3.0])
        assert T.add(a, T.Tensor(np.zeros(3))).data.tolist() == a.data.tolist()
        assert T.mul(a, T.Tensor(np.ones(3))).data.tolist() == a.data.tolist()

    def test_sub_hand(self):
        out = T.sub(T.Tensor([1.0, 2.0]), T.Tensor([2.0, 1.0]))
        assert out.data.tolist() == [-1.0, 1.0]

    def test_trailing_vector_broadcast(self):
        a = T.Tensor(np.ones((2, 3)))
        b = T.Tensor([1.0, 2.0, 3.0])
        assert T.add(a, b).data.tolist() == [[2.0, 3.0, 4.0], [2.0, 3.0, 4.0]]

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((3, 2))))


class TestActivation:
    def test_relu(self):
        out = T.relu(T.Tensor([-1.0, 0.0, 2.0]))
        assert out.data.tolist() == [0.0, 0.0, 2.0]

    def test_gelu_fixed_point(self):
        assert T.gelu(T.Tensor([0.0])).data[0] == 0.0

    def test_gelu_formula(self):
        x = 0.7
        u = math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)
        want = 0.5 * x * (1 + math.tanh(u))
        assert T.gelu(T.Tensor([x])).data[0] == pytest.approx(want, rel=1e-15)

    def test_relu_backward_passthrough(self):
        w = leaf([2.0])
        with T.GradientTape() as tape:
            loss = T.sum_all(T.relu(w))
        tape.backward(loss)
        assert w.grad.tolist() == [1.0]


class TestBackward:
    def test_sum_gives_ones(self):
        w = leaf([[1.0, 2.0], [3.0, 4.0]])
        with T.GradientTape() as tape:
            loss = T.sum_all(w)
        T.backward(loss)
        assert np.array_equal(w.grad, np.ones((2, 2)))

    def test_quadratic(self):
        w = leaf([1.0, 2.0])
        with T.GradientTape() as tape:
            loss = T.sum_all(T.mul(w, w))
        tape.backward(loss)
        assert w.grad.tolist() == [2.0, 4.0]

    def test_non_scalar_loss_rejected(self):
        w = leaf([1.0, 2.0])
        with T.GradientTape() as tape:
            out = T.mul(w, w)
        with pytest.raises(ShapeError):
            tape.backward(out)

    def test_detached_graph_rejected(self):
        w = leaf([1.0])
        out = T.sum_all(w)  # no tape active
        with pytest.raises(TapeError):
            T.backward(out)

    def test_double_backward_rejected(self):
        w = leaf([1.0])
        with T.GradientTape() as tape:
            loss = T.sum_all(T.mul(w, w))
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)

    def test_nested_tapes_rejected(self):
        with T.GradientTape():
            with pytest.raises(TapeError):
                with T.GradientTape():
                    pass

    def test_grad_accumulates_across_tapes(self):
        w = leaf([1.0, -1.0])
        for _ in range(2):
            with T.GradientTape() as tape:
                loss = T.sum_all(T.mul(w, w))
            tape.backward(loss)
        assert w.grad.tolist() == [4.0, -4.0]


class TestGradcheckAllOps:
    def test_every_op_matches_finite_differences(self):
        from textfusion.gradcheck import op_gradcheck_suite
        worst = op_gradcheck_suite(seed=0)
        for name, err in worst.items():
            assert err < 1e-4, f"{name}: relative error {err}"


class TestDeterminism:
    def test_forward_bit_identical(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(-1, 1, (4, 5))
        g = rng.uniform(-1, 1, 5)
        b = rng.uniform(-1, 1, 5)
        one = T.layer_norm(T.Tensor(x), T.Tensor(g), T.Tensor(b), 1e-5).data
        two = T.layer_norm(T.Tensor(x), T.Tensor(g), T.Tensor(b), 1e-5).data
        assert np.array_equal(one, two)
        s1 = T.softmax_lastdim(T.Tensor(x)).data
        s2 = T.softmax_lastdim(T.Tensor(x)).data
        assert np.array_equal(s1, s2)

    def test_forward_stays_finite(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(-1, 1, (3, 4))
        for op in (T.relu, T.gelu, T.absolute, T.softmax_lastdim, T.mean_all):
            assert np.isfinite(np.asarray(op(T.Tensor(x)).data)).all()


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = T.Tensor([1.0, 2.0])
        assert T.dropout(x, 0.0) is x

    def test_positive_rate_masks_and_scales(self):
        rng = np.random.default_rng(0)
        x = T.Tensor(np.ones(1000))
        out = T.dropout(x, 0.5, rng).data
        assert set(np.unique(out)).issubset({0.0, 2.0})
