"""Loss functions: closed-form values, bounds, gradients."""

import math

import numpy as np
import pytest

from procplan import tensor as T
from procplan.gradcheck import grad_check
from procplan.losses import bce_with_logits, cross_entropy, gaussian_kl_to_std_normal, mse
from procplan.tensor import ShapeError, Tensor


class TestClosedForms:
    def test_mse_identical_inputs_is_zero(self):
        x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
        assert mse(x, x).item() == 0.0

    def test_kl_closed_form_mu_two_sigma_one(self):
        # KL(N(2,1) || N(0,1)) = mu^2 / 2 per dimension.
        assert gaussian_kl_to_std_normal(Tensor([2.0]), Tensor([0.0])).item() == pytest.approx(2.0)

    def test_kl_general_closed_form(self):
        rng = np.random.default_rng(1)
        mu = rng.normal(size=(3, 2))
        logvar = rng.normal(size=(3, 2))
        expected = (0.5 * (mu**2 + np.exp(logvar) - 1.0 - logvar)).sum(axis=1).mean()
        got = gaussian_kl_to_std_normal(Tensor(mu), Tensor(logvar)).item()
        assert got == pytest.approx(expected, rel=1e-12)

    def test_cross_entropy_uniform_logits_is_log_num_classes(self):
        for label in range(4):
            loss = cross_entropy(Tensor([[0.0, 0.0, 0.0, 0.0]]), [label])
            assert loss.item() == pytest.approx(math.log(4.0))

    def test_bce_floor_is_target_entropy(self):
        # Feeding the logit of the target back in reaches the analytic floor.
        rng = np.random.default_rng(2)
        t = rng.uniform(0.05, 0.95, size=(3, 5))
        logits = np.log(t / (1.0 - t))
        entropy = (-(t * np.log(t) + (1 - t) * np.log(1 - t))).sum(axis=1).mean()
        got = bce_with_logits(Tensor(logits), Tensor(t)).item()
        assert got == pytest.approx(entropy, rel=1e-10)

    def test_bce_extreme_logits_stable(self):
        loss = bce_with_logits(Tensor([[500.0, -500.0]]), Tensor([[1.0, 0.0]]))
        assert loss.item() == pytest.approx(0.0, abs=1e-12)


class TestBounds:
    def test_kl_nonnegative_and_zero_iff_standard_normal(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            mu = Tensor(rng.normal(size=(2, 2)))
            logvar = Tensor(rng.normal(size=(2, 2)))
            assert gaussian_kl_to_std_normal(mu, logvar).item() >= 0.0
        zero = gaussian_kl_to_std_normal(Tensor(np.zeros(3)), Tensor(np.zeros(3)))
        assert zero.item() == 0.0
        nudged = gaussian_kl_to_std_normal(Tensor([1e-6, 0.0, 0.0]), Tensor(np.zeros(3)))
        assert nudged.item() > 0.0

    def test_mse_and_cross_entropy_nonnegative(self):
        rng = np.random.default_rng(4)
        a, b = Tensor(rng.normal(size=(3,))), Tensor(rng.normal(size=(3,)))
        assert mse(a, b).item() >= 0.0
        assert cross_entropy(Tensor(rng.normal(size=(2, 5))), [0, 4]).item() >= 0.0


class TestValidation:
    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label"):
            cross_entropy(Tensor([[0.0, 1.0]]), [2])
        with pytest.raises(ValueError, match="label"):
            cross_entropy(Tensor([[0.0, 1.0]]), [-1])

    def test_shape_mismatches(self):
        with pytest.raises(ShapeError):
            mse(Tensor([1.0, 2.0]), Tensor([1.0]))
        with pytest.raises(ShapeError):
            bce_with_logits(Tensor([[0.0]]), Tensor([[0.0, 1.0]]))
        with pytest.raises(ShapeError):
            gaussian_kl_to_std_normal(Tensor([0.0]), Tensor([0.0, 0.0]))
        with pytest.raises(ShapeError):
            cross_entropy(Tensor([[0.0, 1.0]]), [0, 1])

    def test_bce_targets_must_be_unit_interval(self):
        with pytest.raises(ValueError, match="0, 1"):
            bce_with_logits(Tensor([[0.0]]), Tensor([[1.5]]))


class TestLossGradients:
    """Each loss kind passes finite differences on 20 seeded inputs."""

    def test_mse_gradients(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(20):
            target = Tensor(rng.normal(size=(3, 4)))
            worst = max(worst, grad_check(lambda t: mse(t, target), rng.normal(size=(3, 4))))
        assert worst < 1e-5

    def test_bce_gradients(self):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(20):
            target = Tensor(rng.uniform(0, 1, size=(3, 4)))
            worst = max(
                worst, grad_check(lambda t: bce_with_logits(t, target), rng.normal(size=(3, 4)))
            )
        assert worst < 1e-5

    def test_cross_entropy_gradients(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(20):
            labels = rng.integers(0, 5, size=3)
            worst = max(
                worst, grad_check(lambda t: cross_entropy(t, labels), rng.normal(size=(3, 5)))
            )
        assert worst < 1e-5

    def test_kl_gradients_both_arguments(self):
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(20):
            other = Tensor(rng.normal(size=(2, 3)))
            worst = max(
                worst,
                grad_check(lambda t: gaussian_kl_to_std_normal(t, other), rng.normal(size=(2, 3))),
                grad_check(lambda t: gaussian_kl_to_std_normal(other, t), rng.normal(size=(2, 3))),
            )
        assert worst < 1e-5
