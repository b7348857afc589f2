from dataclasses import replace
from datetime import timedelta

import numpy as np
import pytest

from loadtune.dataset import WindowedDataset
from loadtune.errors import ConfigurationError, DataError, DimensionError, DivergenceError, RangeError
from loadtune.forecaster import (
    MODEL_PRESETS,
    ModelConfig,
    build_model,
    evaluate_loss,
    fit,
    load_model,
    predict,
    predict_batch,
    rolling_forecast,
    save_model,
)
from loadtune.types import Hyperparams

# closed-form sum over the default architecture's weight and bias arrays
DEFAULT_PARAMETER_COUNT = (
    (12 * 64 + 64)
    + 3 * (64 * 512 + 512)
    + (512 * 64 + 64)
    + 2 * 64
    + (3 * 64 * 64 + 64)
    + (64 * 64 + 64)
    + (64 * 24 + 24)
)


class TestArchitecture:
    def test_default_parameter_count(self):
        assert DEFAULT_PARAMETER_COUNT == 151704
        assert build_model(ModelConfig(), seed=0).parameter_count() == DEFAULT_PARAMETER_COUNT

    def test_default_shapes(self, rng):
        model = build_model(MODEL_PRESETS["full"], seed=0)
        out = model.forward(rng.normal(size=(5, 3, 12)))
        assert out.shape == (5, 24)

    def test_rejects_wrong_window_shape(self, rng, tiny_config):
        model = build_model(tiny_config, seed=0)
        with pytest.raises(DimensionError):
            model.forward(rng.normal(size=(5, 4, 12)))
        with pytest.raises(DimensionError):
            predict(model, rng.normal(size=(3, 11)))

    def test_same_seed_same_weights(self, tiny_config):
        first = build_model(tiny_config, seed=9).params()
        second = build_model(tiny_config, seed=9).params()
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_residual_variant_has_same_parameters(self, tiny_config):
        plain = build_model(tiny_config, seed=0)
        residual = build_model(replace(tiny_config, residual=True), seed=0)
        assert plain.parameter_count() == residual.parameter_count()

    @pytest.mark.parametrize(
        "values", [{"heads": 0}, {"attn_dropout": 1.0}, {"norm_epsilon": 0.0}]
    )
    def test_invalid_config(self, values):
        with pytest.raises(ConfigurationError):
            ModelConfig(**values)


class TestPredict:
    def test_empty_batch(self, tiny_config):
        model = build_model(tiny_config, seed=0)
        assert predict_batch(model, np.zeros((0, 3, 12))).shape == (0, 24)

    def test_zero_output_weights_return_the_bias(self, rng, tiny_config):
        model = build_model(tiny_config, seed=0)
        model.output_layer.p.weights[...] = 0.0
        model.output_layer.p.bias[...] = np.linspace(-1.0, 1.0, 24)
        for window in rng.normal(size=(3, 3, 12)):
            np.testing.assert_array_equal(predict(model, window), np.linspace(-1.0, 1.0, 24))

    def test_single_window_matches_batch(self, rng, tiny_config):
        model = build_model(tiny_config, seed=0)
        windows = rng.normal(size=(4, 3, 12))
        np.testing.assert_allclose(predict(model, windows[2]), predict_batch(model, windows)[2])


class TestFit:
    def test_vanishing_rate_keeps_validation_loss(self, datasets, tiny_config):
        model = build_model(tiny_config, seed=0)
        before = evaluate_loss(model, datasets.val)
        report = fit(model, datasets.train, datasets.val, Hyperparams(64, 1, 1e-12), seed=0)
        assert report.val_loss[0] == pytest.approx(before, abs=1e-6)

    def test_learns_a_linear_target(self, tiny_config):
        rng = np.random.default_rng(21)
        inputs = rng.normal(size=(128, 3, 12))
        targets = inputs.reshape(128, -1) @ rng.normal(0.0, 0.1, size=(36, 24))
        train = WindowedDataset(inputs, targets, np.arange(128))
        model = build_model(replace(tiny_config, attn_dropout=0.0), seed=0)
        before = evaluate_loss(model, train)
        report = fit(model, train, None, Hyperparams(8, 200, 0.01), seed=0)
        assert report.train_loss[-1] < 0.1 * before

    def test_runs_exactly_the_requested_epochs(self, datasets, tiny_config):
        model = build_model(tiny_config, seed=0)
        report = fit(model, datasets.train, datasets.val, Hyperparams(64, 3, 0.01), seed=0)
        assert report.epochs == 3
        assert len(report.train_loss) == len(report.val_loss) == 3
        assert np.all(np.isfinite(report.train_loss + report.val_loss))
        assert report.val_loss[-1] == pytest.approx(evaluate_loss(model, datasets.val))

    def test_training_reduces_loss(self, datasets, tiny_config):
        model = build_model(tiny_config, seed=0)
        before = evaluate_loss(model, datasets.train)
        report = fit(model, datasets.train, None, Hyperparams(16, 5, 0.01), seed=0)
        assert report.val_loss == []
        assert report.train_loss[-1] < before

    def test_is_deterministic(self, datasets, tiny_config):
        reports = []
        for _ in range(2):
            model = build_model(tiny_config, seed=4)
            reports.append(fit(model, datasets.train, datasets.val, Hyperparams(32, 2, 0.01), seed=4))
        assert reports[0].train_loss == reports[1].train_loss
        assert reports[0].val_loss == reports[1].val_loss

    def test_divergence_reports_the_epoch(self, datasets, tiny_config):
        model = build_model(tiny_config, seed=0)
        with pytest.raises(DivergenceError) as info:
            fit(model, datasets.train, datasets.val, Hyperparams(8, 5, 1e10), seed=0)
        assert info.value.epoch >= 1

    def test_feature_mismatch_is_not_divergence(self, datasets):
        model = build_model(ModelConfig(feature_count=5, td_dense_units=4, heads=1, head_dim=4, dense_units=4), 0)
        with pytest.raises(DimensionError):
            fit(model, datasets.train, None, Hyperparams(32, 1, 0.01), seed=0)


class TestRollingForecast:
    def test_produces_one_day_in_megawatts(self, datasets, tiny_config):
        model = build_model(tiny_config, seed=0)
        test = datasets.test
        start = int(test.index[0])
        points = rolling_forecast(model, test, datasets.scaler, start)
        assert [p.hour_index for p in points] == list(range(start, start + 24))
        assert points[1].timestamp - points[0].timestamp == timedelta(hours=1)
        # actual demand comes back in MW, not standardized units
        assert all(p.actual_mw > 100 for p in points)

    def test_shorter_horizon(self, datasets, tiny_config):
        model = build_model(tiny_config, seed=0)
        test = datasets.test
        assert len(rolling_forecast(model, test, datasets.scaler, int(test.index[0]), 6)) == 6

    @pytest.mark.parametrize("horizon", [0, -1, 25])
    def test_horizon_out_of_range(self, datasets, tiny_config, horizon):
        model = build_model(tiny_config, seed=0)
        test = datasets.test
        with pytest.raises(ConfigurationError):
            rolling_forecast(model, test, datasets.scaler, int(test.index[0]), horizon)

    def test_start_outside_windows(self, datasets, tiny_config):
        model = build_model(tiny_config, seed=0)
        with pytest.raises(RangeError):
            rolling_forecast(model, datasets.test, datasets.scaler, 10 ** 6)


class TestBundle:
    def test_save_and_load(self, tmp_path, rng, tiny_config):
        model = build_model(tiny_config, seed=2)
        path = str(tmp_path / "model.npz")
        save_model(model, path, {"features": ["a", "b"]})
        loaded, metadata = load_model(path)
        windows = rng.normal(size=(3, 3, 12))
        np.testing.assert_array_equal(predict_batch(loaded, windows), predict_batch(model, windows))
        assert loaded.config == tiny_config
        assert metadata == {"features": ["a", "b"]}

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "model.npz"
        path.write_text("not a bundle")
        with pytest.raises(DataError):
            load_model(str(path))
