"""Autodiff engine: forward values, analytic gradients, error contracts."""

import numpy as np
import pytest

from procplan import tensor as T
from procplan.gradcheck import grad_check
from procplan.tensor import GraphError, NumericError, ShapeError, Tensor


class TestForwardValues:
    def test_matmul_hand_product(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        assert out.data.tolist() == [[3.0], [7.0]]

    def test_softmax_uniform_by_symmetry(self):
        out = T.softmax_lastdim(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_add_zero_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        out = T.add(Tensor(x), Tensor(np.zeros_like(x)))
        assert np.array_equal(out.data, x)

    def test_softmax_rows_sum_to_one_and_positive(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            x = rng.normal(scale=30.0, size=(4, 7))
            y = T.softmax_lastdim(Tensor(x)).data
            assert np.all(y > 0.0)
            assert np.allclose(y.sum(axis=-1), 1.0, atol=1e-12)

    def test_relu_and_gelu_values(self):
        x = Tensor([-2.0, 0.0, 3.0])
        assert T.relu(x).data.tolist() == [0.0, 0.0, 3.0]
        g = T.gelu(x).data
        assert g[1] == 0.0 and g[2] > 2.9 and -0.1 < g[0] < 0.0

    def test_concat_and_getitem_roundtrip(self):
        a = Tensor([[1.0, 2.0]])
        b = Tensor([[3.0, 4.0]])
        joined = T.concat([a, b], axis=0)
        assert joined.data.tolist() == [[1.0, 2.0], [3.0, 4.0]]
        assert joined[1].data.tolist() == [3.0, 4.0]

    def test_layer_norm_normalizes(self):
        x = Tensor(np.random.default_rng(2).normal(size=(5, 8)) * 4 + 3)
        y = T.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-9)
        assert np.allclose(y.var(axis=-1), 1.0, atol=1e-4)

    def test_conv1d_same_preserves_length(self):
        x = Tensor(np.random.default_rng(3).normal(size=(6, 4)))
        w = Tensor(np.random.default_rng(4).normal(size=(3, 4, 5)))
        assert T.conv1d_same(x, w).shape == (6, 5)

    def test_conv1d_same_matches_manual_stencil(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 2))
        w = rng.normal(size=(3, 2, 3))
        out = T.conv1d_same(Tensor(x), Tensor(w)).data
        padded = np.vstack([np.zeros((1, 2)), x, np.zeros((1, 2))])
        expected = np.stack(
            [sum(padded[t + k] @ w[k] for k in range(3)) for t in range(4)]
        )
        assert np.allclose(out, expected, atol=1e-12)


class TestErrors:
    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]]))

    def test_add_broadcast_failure(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_concat_off_axis_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4)))], axis=0)

    def test_conv_kernel_must_be_odd(self):
        with pytest.raises(ShapeError):
            T.conv1d_same(Tensor(np.ones((4, 2))), Tensor(np.ones((2, 2, 2))))

    def test_non_finite_output_names_op(self):
        with pytest.raises(NumericError, match="exp"):
            T.exp(Tensor([1000.0]))
        with pytest.raises(NumericError, match="log"):
            T.log(Tensor([-1.0]))

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericError):
            Tensor([np.nan])


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([3.0], requires_grad=True)
        T.sum(T.mul(x, x)).backward()
        assert x.grad.tolist() == [6.0]

    def test_linear_mse_matches_normal_equation_gradient(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(6, 3))
        y = rng.normal(size=(6, 1))
        w = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
        from procplan.losses import mse

        mse(T.matmul(Tensor(X), w), Tensor(y)).backward()
        expected = 2.0 / 6.0 * X.T @ (X @ w.data - y)
        assert np.allclose(w.grad, expected, atol=1e-12)

    def test_constant_loss_gives_zero_grads(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        T.sum(T.mul(x, Tensor([0.0, 0.0]))).backward()
        assert np.array_equal(x.grad, [0.0, 0.0])

    def test_backward_requires_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            T.mul(x, x).backward()

    def test_backward_on_detached_tensor(self):
        with pytest.raises(GraphError):
            Tensor([1.0]).backward()

    def test_repeated_backward_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        loss = T.sum(T.mul(x, x))
        loss.backward()
        loss.backward()
        assert x.grad.tolist() == [8.0]

    def test_broadcast_bias_gradient_sums_over_batch(self):
        b = Tensor([1.0, -1.0], requires_grad=True)
        x = Tensor(np.ones((4, 2)))
        T.sum(T.add(x, b)).backward()
        assert b.grad.tolist() == [4.0, 4.0]

    def test_value_semantics_constructor_copies(self):
        src = np.zeros(3)
        t = Tensor(src)
        src[0] = 99.0
        assert t.data[0] == 0.0


def _random_case(rng, shape):
    return rng.normal(size=shape)


PRIMITIVE_CASES = {
    "add": lambda t, aux: T.sum(T.mul(T.add(t, aux), T.add(t, aux))),
    "mul": lambda t, aux: T.sum(T.mul(T.mul(t, aux), t)),
    "matmul": lambda t, aux: T.sum(T.matmul(t, aux)),
    "concat": lambda t, aux: T.sum(T.mul(T.concat([t, aux], axis=0), T.concat([t, aux], axis=0))),
    "relu": lambda t, aux: T.sum(T.relu(t)),
    "gelu": lambda t, aux: T.sum(T.gelu(t)),
    "softmax_lastdim": lambda t, aux: T.sum(T.mul(T.softmax_lastdim(t), aux)),
    "layer_norm": lambda t, aux: T.sum(
        T.mul(T.layer_norm(t, Tensor(np.ones(t.shape[-1])), Tensor(np.zeros(t.shape[-1]))), aux)
    ),
    "mean": lambda t, aux: T.mean(T.mul(t, aux)),
    "sum": lambda t, aux: T.sum(T.mul(t, aux)),
    "conv1d_same": None,  # aux is the kernel; handled below
}


class TestGradChecks:
    """Every primitive passes a finite-difference check on 20 seeded tensors."""

    @pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
    def test_primitive_gradients(self, name):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(20):
            if name == "matmul":
                point = _random_case(rng, (3, 4))
                aux = Tensor(_random_case(rng, (4, 2)))
            elif name == "conv1d_same":
                point = _random_case(rng, (5, 3))
                aux = Tensor(_random_case(rng, (3, 3, 2)))
            else:
                point = _random_case(rng, (3, 4))
                aux = Tensor(_random_case(rng, (3, 4)))
            if name == "conv1d_same":
                fn = lambda t: T.sum(T.conv1d_same(t, aux))  # noqa: E731
                worst = max(worst, grad_check(fn, point))
                fn_w = lambda wt: T.sum(T.conv1d_same(Tensor(point), wt))  # noqa: E731
                worst = max(worst, grad_check(fn_w, aux.data))
            else:
                worst = max(worst, grad_check(lambda t: PRIMITIVE_CASES[name](t, aux), point))
        assert worst < 1e-5, f"{name}: worst relative error {worst}"

    def test_pow_and_elementwise_internals(self):
        rng = np.random.default_rng(9)
        point = np.abs(rng.normal(size=(3, 3))) + 0.5
        assert grad_check(lambda t: T.sum(T.power(t, 1.7)), point) < 1e-6
        assert grad_check(lambda t: T.sum(T.tanh(t)), rng.normal(size=(4,))) < 1e-6
        assert grad_check(lambda t: T.sum(T.sigmoid(t)), rng.normal(size=(4,))) < 1e-6
        assert grad_check(lambda t: T.sum(T.exp(t)), rng.normal(size=(4,))) < 1e-6
        assert grad_check(lambda t: T.sum(T.log(t)), point) < 1e-6

    def test_clip_passes_gradient_inside_bounds(self):
        rng = np.random.default_rng(10)
        point = rng.uniform(-0.8, 0.8, size=(5,))
        assert grad_check(lambda t: T.sum(T.mul(T.clip(t, -1.0, 1.0), t)), point) < 1e-6
        x = Tensor(np.array([-3.0, 0.0, 3.0]), requires_grad=True)
        T.sum(T.clip(x, -1.0, 1.0)).backward()
        assert x.grad.tolist() == [0.0, 1.0, 0.0]
