"""Tests for the L1 objective, Adam and the training loop"""

from pathlib import Path

import numpy as np
import pytest

from wfen.checkpoint import load_checkpoint
from wfen.config import RunConfig
from wfen.errors import ShapeError, TrainingDivergedError
from wfen.model import build_model
from wfen.nn import ParameterStore
from wfen.pipeline import WFEN
from wfen.tensor import Tensor, backward
from wfen.train import (
    Adam,
    AdamState,
    TrainReport,
    adam_step,
    l1_loss,
    parameter_stats,
    train_loop,
)


def _with(run_config: RunConfig, **train) -> RunConfig:
    config = run_config.model_copy(deep=True)
    for key, value in train.items():
        setattr(config.train, key, value)
    return config


def _train(run_config: RunConfig, **kwargs):
    model, store = build_model(run_config.model, run_config.train.seed)
    return model, store, train_loop(model, store, run_config, **kwargs)


class TestL1Loss:
    def test_hand_example(self):
        loss = l1_loss(Tensor([1.0, 2.0, 3.0]), Tensor([1.0, 1.0, 1.0]))
        assert loss.item() == pytest.approx(1.0)

    def test_gradient_is_sign_over_count(self):
        pred = Tensor([0.5, -2.0, 3.0, 1.0], requires_grad=True)
        grads = backward(l1_loss(pred, Tensor([0.0, 0.0, 0.0, 2.0])), {"pred": pred})
        np.testing.assert_allclose(grads["pred"].data, [0.25, -0.25, 0.25, -0.25])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


class TestAdam:
    def test_constant_gradient_moves_by_learning_rate(self, f64):
        store = ParameterStore([("p", Tensor([1.0]))])
        state = AdamState.for_store(store)
        adam_step(store, {"p": np.array([0.5])}, state, lr=0.1)
        np.testing.assert_allclose(store["p"].data, [0.9], rtol=1e-7)
        adam_step(store, {"p": np.array([0.5])}, state, lr=0.1)
        np.testing.assert_allclose(store["p"].data, [0.8], rtol=1e-7)
        assert state.t == 2

    def test_zero_learning_rate_is_identity(self, rng):
        values = rng.standard_normal((2, 3)).astype(np.float32)
        store = ParameterStore([("w", Tensor(values.copy()))])
        Adam(store, lr=0.0).step({"w": rng.standard_normal((2, 3))})
        np.testing.assert_array_equal(store["w"].data, values)

    def test_update_keeps_parameter_dtype(self):
        store = ParameterStore([("w", Tensor(np.ones(3, dtype=np.float32)))])
        Adam(store).step({"w": np.ones(3, dtype=np.float64)})
        assert store["w"].dtype == np.float32

    def test_missing_gradient_names_parameter(self):
        store = ParameterStore([("a", Tensor([1.0])), ("b", Tensor([1.0]))])
        with pytest.raises(KeyError, match="'b'"):
            adam_step(store, {"a": np.ones(1)}, AdamState.for_store(store))

    def test_gradient_shape_checked(self):
        store = ParameterStore([("a", Tensor([1.0, 2.0]))])
        with pytest.raises(ShapeError):
            adam_step(store, {"a": np.ones(3)}, AdamState.for_store(store))


class TestTrainReport:
    def test_logged_steps_include_last(self):
        losses = [0.5, 0.4, 0.3, 0.2, 0.1]
        report = TrainReport(losses=losses, checkpoints=[], wall_time=0.0, log_every=2)
        assert report.logged_steps() == [2, 4, 5]
        assert report.to_text().splitlines() == [
            "step 2 loss 0.400000",
            "step 4 loss 0.200000",
            "step 5 loss 0.100000",
        ]

    def test_empty_report(self):
        report = TrainReport(losses=[], checkpoints=[], wall_time=0.0)
        assert report.to_text() == ""
        assert np.isnan(report.final_loss)

    def test_parameter_stats_put_non_finite_first(self):
        store = ParameterStore([("ok", Tensor([1.0, -2.0])), ("bad", Tensor([np.inf, 3.0]))])
        stats = parameter_stats(store)
        assert list(stats) == ["bad", "ok"]
        assert stats["bad"]["nonfinite"] == 1.0
        assert stats["ok"]["min"] == -2.0


class TestTrainLoop:
    def test_losses_recorded_per_step(self, tiny_run_config):
        _, _, report = _train(tiny_run_config)
        assert report.steps == 3
        assert all(np.isfinite(report.losses))
        assert report.param_count > 0

    def test_same_seed_is_deterministic(self, tiny_run_config):
        first = _train(tiny_run_config)[2]
        second = _train(tiny_run_config)[2]
        assert first.losses == second.losses
        assert first.data_digest == second.data_digest

    def test_seed_changes_data_order(self, tiny_run_config):
        first = _train(tiny_run_config)[2]
        second = _train(_with(tiny_run_config, seed=9))[2]
        assert first.data_digest != second.data_digest

    def test_zero_learning_rate_keeps_initialization(self, tiny_run_config):
        config = _with(tiny_run_config, lr=0.0)
        _, initial = build_model(config.model, config.train.seed)
        _, store, _ = _train(config)
        for name in initial:
            np.testing.assert_array_equal(store[name].data, initial[name].data)

    def test_checkpoints_written(self, tiny_run_config, tmp_path):
        config = _with(tiny_run_config, checkpoint_every=2)
        _, store, report = _train(config, checkpoint_path=tmp_path / "model.wfen")
        assert [Path(p).name for p in report.checkpoints] == [
            "model_step000002.wfen",
            "model.wfen",
        ]
        checkpoint = load_checkpoint(tmp_path / "model.wfen")
        assert RunConfig.parse(checkpoint.config_text) == config
        assert list(checkpoint.tensors) == list(store)

    def test_divergence_reports_step_and_parameters(self, tiny_run_config):
        with pytest.raises(TrainingDivergedError) as excinfo:
            _train(_with(tiny_run_config, lr=1e30, steps=5))
        assert excinfo.value.step >= 2
        assert excinfo.value.parameter_stats

    def test_overfits_small_set(self, tiny_run_config):
        config = _with(tiny_run_config, steps=400, batch_size=4, num_images=4, log_every=50)
        report = _train(config)[2]
        assert report.final_loss < 0.1 * report.initial_loss
        windows = np.array(report.losses).reshape(-1, 50).mean(axis=1)
        assert np.all(np.diff(windows) <= 1e-3)


class TestTrainMixin:
    def test_writes_checkpoint_and_report(self, tiny_run_config, settings, tmp_path):
        report = WFEN(run_config=tiny_run_config, settings=settings).train(output_dir=tmp_path)
        assert (tmp_path / "model.wfen").exists()
        lines = (tmp_path / "train_report.txt").read_text().splitlines()
        assert lines == [f"step {s} loss {report.losses[s - 1]:.6f}" for s in (1, 2, 3)]

    def test_seed_override_is_echoed(self, tiny_run_config, settings, tmp_path):
        WFEN(run_config=tiny_run_config, settings=settings).train(output_dir=tmp_path, seed=7)
        echoed = RunConfig.parse(load_checkpoint(tmp_path / "model.wfen").config_text)
        assert echoed.train.seed == 7
        assert tiny_run_config.train.seed == 0
