import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hit import tensor as T
from hit.errors import ContractError, DegenerateInputError, ShapeError
from hit.optim import AdamW
from hit.tensor import Tensor, backward, no_grad

from helpers import check_gradients


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1, 2], [3, 4]])
        np.testing.assert_array_equal(T.matmul(a, Tensor(np.eye(2))).data, a.data)

    def test_row_times_column(self):
        # 1*3 + 2*4
        assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]

    def test_zero_left(self):
        rng = np.random.default_rng(0)
        out = T.matmul(Tensor(np.zeros((2, 3))), Tensor(rng.normal(size=(3, 5))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 5)))

    def test_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


class TestMaskedMeanPool:
    def test_mean(self):
        out = T.masked_mean_pool(Tensor([[2, 0], [4, 0]]), [1, 1])
        assert out.data.tolist() == [3.0, 0.0]

    def test_padding_excluded(self):
        out = T.masked_mean_pool(Tensor([[2, 0], [999, 999]]), [1, 0])
        assert out.data.tolist() == [2.0, 0.0]

    def test_single_row(self):
        out = T.masked_mean_pool(Tensor([[1.5, -2.0]]), [1])
        assert out.data.tolist() == [1.5, -2.0]

    def test_padding_gets_no_gradient(self):
        x = Tensor([[2.0, 0.0], [999.0, 999.0]], requires_grad=True)
        backward(T.sum(T.masked_mean_pool(x, [1, 0])))
        assert x.grad.tolist() == [[1.0, 1.0], [0.0, 0.0]]

    def test_empty_mask(self):
        with pytest.raises(DegenerateInputError):
            T.masked_mean_pool(Tensor([[1.0, 2.0]]), [0])


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(T.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8], atol=1e-15)

    def test_unit_vector_fixed(self):
        v = np.array([0.6, 0.8])
        np.testing.assert_allclose(T.l2_normalize(Tensor(v)).data, v, atol=1e-15)

    def test_zero_vector(self):
        with pytest.raises(DegenerateInputError):
            T.l2_normalize(Tensor([0.0, 0.0]))

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=16))
    def test_unit_norm(self, values):
        v = np.array(values)
        if np.linalg.norm(v) <= 1e-6:
            return
        out = T.l2_normalize(Tensor(v)).data
        assert abs(np.linalg.norm(out) - 1.0) < 1e-12
        assert np.dot(out, v) > 0


class TestBackward:
    def test_sum_linear(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(T.sum(x))
        assert x.grad.tolist() == [1.0, 1.0, 1.0]

    def test_square(self):
        x = Tensor(2.0, requires_grad=True)
        backward(T.mul(x, x))
        assert x.grad == 4.0

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(T.scale(x, 2.0))

    def test_reuse_doubles_gradient(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=4)
        once = Tensor(rng.normal(size=4), requires_grad=True)
        backward(T.sum(T.mul(once, w)))
        twice = Tensor(once.data.copy(), requires_grad=True)
        backward(T.add(T.sum(T.mul(twice, w)), T.sum(T.mul(twice, w))))
        np.testing.assert_allclose(twice.grad, 2 * once.grad, rtol=0, atol=0)

    def test_graph_freed(self):
        x = Tensor([1.0], requires_grad=True)
        y = T.scale(x, 3.0)
        loss = T.sum(y)
        backward(loss)
        assert loss._parents == () and y._backward is None

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = T.scale(x, 3.0)
        assert not y.requires_grad and y._parents == ()


SHAPES = [(1, 1), (3, 4), (8, 8), (5, 2)]


@pytest.mark.parametrize("shape", SHAPES)
class TestFiniteDifferences:
    """Every primitive's backward rule against central differences (h=1e-5)."""

    def rng(self, shape):
        return np.random.default_rng(hash(shape) % 2**32)

    def test_matmul(self, shape):
        rng = self.rng(shape)
        a, b = rng.normal(size=shape), rng.normal(size=(shape[1], 3))
        check_gradients(T.matmul, [a, b], rng)

    def test_batched_matmul(self, shape):
        rng = self.rng(shape)
        a, b = rng.normal(size=(2,) + shape), rng.normal(size=(shape[1], 3))
        check_gradients(T.matmul, [a, b], rng)

    def test_add_broadcast(self, shape):
        rng = self.rng(shape)
        check_gradients(T.add, [rng.normal(size=shape), rng.normal(size=shape[1:])], rng)

    def test_sub(self, shape):
        rng = self.rng(shape)
        check_gradients(T.sub, [rng.normal(size=shape), rng.normal(size=shape)], rng)

    def test_mul(self, shape):
        rng = self.rng(shape)
        check_gradients(T.mul, [rng.normal(size=shape), rng.normal(size=shape[1:])], rng)

    def test_scale(self, shape):
        rng = self.rng(shape)
        check_gradients(lambda a: T.scale(a, -2.5), [rng.normal(size=shape)], rng)

    def test_softmax_rows(self, shape):
        rng = self.rng(shape)
        check_gradients(T.softmax_rows, [rng.normal(size=shape)], rng)

    def test_masked_softmax(self, shape):
        rng = self.rng(shape)
        mask = rng.random(shape) > 0.3
        mask[:, 0] = True
        check_gradients(lambda a: T.softmax_rows(a, mask), [rng.normal(size=shape)], rng)

    def test_log_softmax(self, shape):
        rng = self.rng(shape)
        check_gradients(T.log_softmax_rows, [rng.normal(size=shape) * 3], rng)

    def test_layer_norm(self, shape):
        # with fewer than 3 columns the output is (nearly) constant
        rng = self.rng(shape)
        check_gradients(T.layer_norm, [rng.normal(size=(shape[0], max(3, shape[1])))], rng)

    def test_batch_norm(self, shape):
        # two rows normalize to exactly +-1, so use at least three
        rng = self.rng(shape)
        check_gradients(T.batch_norm, [rng.normal(size=(max(3, shape[0]), shape[1]))], rng)

    def test_relu(self, shape):
        rng = self.rng(shape)
        x = rng.normal(size=shape)
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
        check_gradients(T.relu, [x], rng)

    def test_concat(self, shape):
        rng = self.rng(shape)
        check_gradients(
            lambda a, b: T.concat([a, b], axis=1), [rng.normal(size=shape), rng.normal(size=(shape[0], 2))], rng
        )

    def test_slice(self, shape):
        rng = self.rng(shape)
        check_gradients(lambda a: a[:, : max(1, shape[1] // 2)], [rng.normal(size=shape)], rng)

    def test_gather_repeated(self, shape):
        rng = self.rng(shape)
        ids = np.array([0, shape[0] - 1, 0])
        check_gradients(lambda a: a[ids], [rng.normal(size=shape)], rng)

    def test_transpose_reshape(self, shape):
        rng = self.rng(shape)
        check_gradients(lambda a: T.reshape(T.transpose(a), (-1,)), [rng.normal(size=shape)], rng)

    def test_sum_mean(self, shape):
        rng = self.rng(shape)
        check_gradients(lambda a: T.add(T.sum(a, axis=0), T.mean(a, axis=0)), [rng.normal(size=shape)], rng)

    def test_l2_normalize(self, shape):
        rng = self.rng(shape)
        check_gradients(T.l2_normalize, [rng.normal(size=shape)], rng)

    def test_masked_mean_pool(self, shape):
        rng = self.rng(shape)
        mask = rng.random(shape[0]) > 0.4
        mask[0] = True
        check_gradients(lambda a: T.masked_mean_pool(a, mask), [rng.normal(size=shape)], rng)

    def test_masked_max_pool(self, shape):
        rng = self.rng(shape)
        mask = np.ones(shape[0], dtype=bool)
        check_gradients(lambda a: T.masked_max_pool(a, mask), [rng.normal(size=shape)], rng)


class TestNormalizationInvariants:
    @settings(max_examples=50)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
    def test_softmax_rows_sum_to_one(self, n, d, seed):
        x = np.random.default_rng(seed).normal(scale=10, size=(n, d))
        y = T.softmax_rows(Tensor(x)).data
        assert np.all(y > 0)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)

    @settings(max_examples=50)
    @given(st.integers(1, 8), st.integers(2, 8), st.integers(0, 2**31))
    def test_layer_norm_moments(self, n, d, seed):
        x = np.random.default_rng(seed).normal(loc=3, scale=5, size=(n, d))
        y = T.layer_norm(Tensor(x)).data
        v = x.var(axis=1)
        assert np.all(np.abs(y.mean(axis=1)) < 1e-10)
        np.testing.assert_allclose(y.var(axis=1), v / (v + T.LN_EPS), rtol=1e-10)

    def test_masked_softmax_zero_weight(self):
        y = T.softmax_rows(Tensor([[5.0, 1.0, 9.0]]), np.array([[True, True, False]])).data
        assert y[0, 2] == 0.0
        np.testing.assert_allclose(y[0, :2].sum(), 1.0, atol=1e-15)

    def test_finite_outputs(self):
        y = T.log_softmax_rows(Tensor([[1000.0, -1000.0, 0.0]])).data
        assert np.all(np.isfinite(y))


class TestAdamW:
    def test_zero_grad_no_decay_is_noop(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        opt = AdamW({"p": p}.items(), lr=0.1, weight_decay=0.0)
        opt.step()
        assert p.data.tolist() == [1.0, -2.0]

    def test_single_step_closed_form(self):
        lr, wd, b1, b2, eps = 0.01, 0.1, 0.9, 0.999, 1e-8
        theta, g = 0.5, 0.3
        p = Tensor([theta], requires_grad=True)
        opt = AdamW({"p": p}.items(), lr=lr, weight_decay=wd, betas=(b1, b2), eps=eps)
        p.grad = np.array([g])
        opt.step()
        # first step: m_hat = g, v_hat = g^2
        m_hat = ((1 - b1) * g) / (1 - b1)
        v_hat = ((1 - b2) * g * g) / (1 - b2)
        expected = theta * (1 - lr * wd) - lr * m_hat / (np.sqrt(v_hat) + eps)
        assert p.data[0] == pytest.approx(expected, rel=1e-15, abs=1e-15)

    def test_identical_params_stay_identical(self):
        rng = np.random.default_rng(3)
        init = rng.normal(size=5)
        a = Tensor(init, requires_grad=True)
        b = Tensor(init, requires_grad=True)
        opt = AdamW({"a": a, "b": b}.items(), lr=0.05)
        for _ in range(3):
            g = rng.normal(size=5)
            a.grad, b.grad = g.copy(), g.copy()
            opt.step()
        np.testing.assert_array_equal(a.data, b.data)

    def test_missing_grad(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = None
        opt = AdamW({"enc.w": p}.items())
        with pytest.raises(ContractError, match="enc.w"):
            opt.step()
