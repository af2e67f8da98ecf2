"""Parameter store and AdamW update rule."""

import numpy as np
import pytest

from procplan.optim import FrozenStoreError, MissingGradError, ParamStore, adamw_step


def _store_with(name="w", value=(1.0, 2.0)):
    store = ParamStore()
    store.add(name, np.array(value))
    return store


class TestParamStore:
    def test_names_unique(self):
        store = _store_with()
        with pytest.raises(ValueError, match="already registered"):
            store.add("w", np.zeros(2))

    def test_zero_grads_clears(self):
        store = _store_with()
        store["w"].grad = np.ones(2)
        store.zero_grads()
        assert store["w"].grad is None

    def test_checksum_tracks_values(self):
        store = _store_with()
        before = store.checksum()
        assert store.checksum() == before
        store["w"].data[0] += 1e-12
        assert store.checksum() != before

    def test_load_state_validates_names_and_shapes(self):
        store = _store_with()
        with pytest.raises(ValueError, match="mismatch"):
            store.load_state({"other": np.zeros(2)})
        with pytest.raises(ValueError, match="shape"):
            store.load_state({"w": np.zeros(3)})

    def test_freeze_blocks_updates(self):
        store = _store_with()
        store.freeze()
        assert not store["w"].requires_grad
        store["w"].grad = np.zeros(2)
        with pytest.raises(FrozenStoreError):
            adamw_step(store, lr=0.1)


class TestAdamW:
    def test_zero_grads_no_decay_leaves_params_unchanged(self):
        store = _store_with()
        before = store["w"].data.copy()
        store["w"].grad = np.zeros(2)
        adamw_step(store, lr=0.1, weight_decay=0.0)
        assert np.array_equal(store["w"].data, before)
        assert store.step_count == 1

    def test_single_step_matches_hand_evaluated_moments(self):
        # Fresh state, one step: m_hat = g, v_hat = g^2 after bias correction.
        g = 0.37
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        store = _store_with(value=(2.0,))
        store["w"].grad = np.array([g])
        adamw_step(store, lr=lr, betas=(b1, b2), eps=eps)
        m_hat = (1 - b1) * g / (1 - b1)
        v_hat = (1 - b2) * g * g / (1 - b2)
        expected = 2.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
        assert store["w"].data[0] == pytest.approx(expected, rel=1e-14)

    def test_two_steps_match_hand_recursion(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        grads = [0.5, -1.25]
        store = _store_with(value=(1.0,))
        p, m, v = 1.0, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            store["w"].grad = np.array([g])
            adamw_step(store, lr=lr, betas=(b1, b2), eps=eps)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert store["w"].data[0] == pytest.approx(p, rel=1e-12)

    def test_decoupled_decay_shrinks_param_with_zero_grad(self):
        store = _store_with(value=(4.0,))
        store["w"].grad = np.zeros(1)
        adamw_step(store, lr=0.1, weight_decay=0.01)
        assert store["w"].data[0] == pytest.approx(4.0 - 0.1 * 0.01 * 4.0, rel=1e-12)

    def test_missing_grad_names_parameter(self):
        store = ParamStore()
        store.add("layer.weight", np.zeros(2))
        store.add("layer.bias", np.zeros(2))
        store["layer.weight"].grad = np.zeros(2)
        with pytest.raises(MissingGradError, match="layer.bias"):
            adamw_step(store, lr=0.1)

    def test_zero_lr_is_a_noop_on_values(self):
        store = _store_with()
        before = store["w"].data.copy()
        store["w"].grad = np.array([1.0, -2.0])
        adamw_step(store, lr=0.0)
        assert np.array_equal(store["w"].data, before)

    def test_negative_lr_rejected(self):
        store = _store_with()
        store["w"].grad = np.zeros(2)
        with pytest.raises(ValueError):
            adamw_step(store, lr=-0.1)

    def test_bit_reproducible_across_runs(self):
        def run():
            rng = np.random.default_rng(11)
            store = ParamStore()
            store.add("a", rng.normal(size=(4, 3)))
            store.add("b", rng.normal(size=(3,)))
            for _ in range(25):
                for t in store.tensors():
                    t.grad = rng.normal(size=t.shape)
                adamw_step(store, lr=3e-3, weight_decay=1e-2)
                store.zero_grads()
            return store.checksum()

        assert run() == run()

    def test_grads_left_untouched(self):
        store = _store_with()
        g = np.array([1.0, 2.0])
        store["w"].grad = g
        adamw_step(store, lr=0.1)
        assert store["w"].grad is g
