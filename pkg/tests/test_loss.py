import numpy as np
import pytest

from rvhash import tensor as T
from rvhash.loss import (
    LossConfig,
    e1_classification,
    e2_quantization,
    e3_bit_balance,
    total_objective,
)


class TestE1:
    def test_perfect_prediction_is_zero(self):
        t = np.array([[1.0, 0.0], [0.0, 1.0]])
        pred = t.copy()
        assert e1_classification(t, pred, np.zeros((2, 2)), 0.0) == 0.0

    def test_one_over_e_gives_one(self):
        t = np.array([[1.0, 0.0]])
        pred = np.array([[1 / np.e, 1 - 1 / np.e]])
        assert e1_classification(t, pred, np.zeros((2, 2)), 0.0) == pytest.approx(1.0, abs=1e-12)

    def test_regularizer_only(self):
        t = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert e1_classification(t, t, np.ones((2, 2)), 1.0) == pytest.approx(4.0)

    def test_non_one_hot_rejected(self):
        bad = np.array([[1.0, 1.0]])
        with pytest.raises(ValueError, match="one-hot"):
            e1_classification(bad, bad, np.zeros((2, 2)), 0.0)

    def test_clamp_prevents_infinity(self):
        t = np.array([[1.0, 0.0]])
        pred = np.array([[0.0, 1.0]])
        val = e1_classification(t, pred, np.zeros((1, 1)), 0.0)
        assert np.isfinite(val) and val == pytest.approx(-np.log(1e-12))


class TestE2:
    def test_all_half_is_zero(self):
        assert e2_quantization(np.full((3, 4), 0.5), 2) == 0.0

    def test_binary_limit_quarter_per_sample(self):
        n, bits = 5, 16
        h = np.where(T.make_rng(0).random((n, bits)) < 0.5, 1e-9, 1 - 1e-9)
        assert e2_quantization(h, 2) == pytest.approx(0.25 * n, rel=1e-6)

    def test_p1_analytic(self):
        assert e2_quantization(np.array([0.9, 0.1]), 1) == pytest.approx(0.4, abs=1e-12)

    def test_nonnegative_and_zero_iff_half(self):
        rng = T.make_rng(1)
        h = rng.uniform(0.0, 1.0, size=(4, 8))
        assert e2_quantization(h, 2) > 0
        assert e2_quantization(np.full((2, 8), 0.5), 2) == 0.0


class TestE3:
    def test_balanced_sample_is_zero(self):
        h = np.array([[0.2, 0.8, 0.3, 0.7]])
        assert e3_bit_balance(h, 1) == pytest.approx(0.0, abs=1e-15)

    def test_all_point_nine_p1(self):
        for bits in (4, 8, 32):
            assert e3_bit_balance(np.full((1, bits), 0.9), 1) == pytest.approx(0.4, abs=1e-12)

    def test_all_point_nine_p2(self):
        assert e3_bit_balance(np.full((1, 8), 0.9), 2) == pytest.approx(0.16, abs=1e-12)


class TestLossConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.loss_alpha == 1.0 and cfg.loss_beta == 1.0
        assert cfg.p == 2 and cfg.weight_decay == 5e-4 and not cfg.e3_enabled

    @pytest.mark.parametrize(
        "kwargs", [dict(loss_alpha=0.0), dict(loss_beta=-1.0), dict(p=3), dict(weight_decay=-0.1)]
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)


class TestTotalObjective:
    def test_beta_zero_reduces_to_classification(self):
        rng = T.make_rng(2)
        t = np.eye(3)
        pred = T.softmax_rows(rng.normal(size=(3, 3)))
        h = rng.uniform(0.1, 0.9, size=(3, 6))
        w_c = rng.normal(size=(6, 3))
        cfg = LossConfig(loss_beta=0.0, weight_decay=0.0)
        obj = total_objective(t, pred, h, w_c, cfg)
        assert obj.value == pytest.approx(e1_classification(t, pred, w_c, 0.0))

    def test_e2_gradient_formula_p2(self):
        rng = T.make_rng(3)
        h = rng.uniform(0.1, 0.9, size=(4, 8))
        t = np.zeros((4, 3))
        t[:, 0] = 1.0
        pred = np.full((4, 3), 1.0 / 3.0)
        cfg = LossConfig(loss_alpha=1.0, loss_beta=2.5, weight_decay=0.0)
        obj = total_objective(t, pred, h, np.zeros((8, 3)), cfg)
        want = -(2 * 2.5 / 8) * (h - 0.5)
        np.testing.assert_allclose(obj.d_hhat, want, atol=1e-12)

    def test_moving_any_bit_off_half_decreases_objective(self):
        t = np.array([[1.0, 0.0]])
        pred = np.array([[0.7, 0.3]])
        w_c = np.zeros((4, 2))
        cfg = LossConfig(loss_beta=1.0, weight_decay=0.0)
        base_h = np.full((1, 4), 0.5)
        base = total_objective(t, pred, base_h, w_c, cfg).value
        for j in range(4):
            for delta in (-0.25, 0.25):
                h = base_h.copy()
                h[0, j] += delta
                assert total_objective(t, pred, h, w_c, cfg).value < base

    def test_softmax_e1_translation_invariant_in_logits(self):
        rng = T.make_rng(4)
        logits = rng.normal(size=(5, 4))
        t = np.zeros((5, 4))
        t[np.arange(5), rng.integers(0, 4, 5)] = 1.0
        w_c = rng.normal(size=(3, 4))
        a = e1_classification(t, T.softmax_rows(logits), w_c, 0.0)
        b = e1_classification(t, T.softmax_rows(logits + rng.normal(size=(5, 1))), w_c, 0.0)
        assert a == pytest.approx(b, abs=1e-10)

    def test_all_terms_nonnegative(self):
        rng = T.make_rng(5)
        h = rng.uniform(0.01, 0.99, size=(6, 8))
        pred = T.softmax_rows(rng.normal(size=(6, 4)))
        t = np.zeros((6, 4))
        t[np.arange(6), rng.integers(0, 4, 6)] = 1.0
        assert e1_classification(t, pred, rng.normal(size=(8, 4)), 0.01) >= 0
        assert e2_quantization(h, 1) >= 0
        assert e3_bit_balance(h, 2) >= 0

    def test_no_hash_output_supported(self):
        t = np.array([[1.0, 0.0]])
        pred = np.array([[0.6, 0.4]])
        obj = total_objective(t, pred, None, np.zeros((2, 2)), LossConfig())
        assert obj.d_hhat is None and obj.e2 == 0.0
