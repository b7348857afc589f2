import numpy as np
import pytest

from loadtune.errors import ConfigurationError, DimensionError, NumericError, UsageError
from loadtune.forecaster import ModelConfig, build_model
from loadtune.nn import (
    AttentionParams,
    Dense,
    DenseParams,
    GradientTape,
    LayerNormParams,
    MultiHeadAttention,
    attention_forward,
    backward,
    dense_forward,
    dropout_apply,
    layer_norm_forward,
    mse_loss,
    mse_loss_grad,
    optimizer_step,
    relu_grad,
    softmax,
)


class TestActivations:
    def test_relu_grad_is_zero_at_zero(self):
        np.testing.assert_array_equal(relu_grad(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 1.0])

    def test_softmax_rows_sum_to_one(self, rng):
        out = softmax(rng.normal(size=(5, 7)) * 50)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_survives_large_inputs(self):
        out = softmax(np.array([1000.0, 1000.0]))
        np.testing.assert_allclose(out, [0.5, 0.5])


class TestDropout:
    def test_inference_returns_input_unchanged(self, rng):
        x = rng.normal(size=(4, 3))
        assert dropout_apply(x, 0.5, training=False) is x

    def test_zero_rate_is_identity(self, rng):
        x = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(dropout_apply(x, 0.0, training=True, rng=rng), x)

    def test_survivors_are_scaled(self, rng):
        x = np.ones((200, 200))
        out = dropout_apply(x, 0.25, training=True, rng=rng)
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
        assert out.mean() == pytest.approx(1.0, abs=0.02)

    @pytest.mark.parametrize("rate", [1.0, -0.1])
    def test_rate_out_of_range(self, rate):
        with pytest.raises(ConfigurationError):
            dropout_apply(np.ones(3), rate, training=False)

    def test_training_needs_a_generator(self):
        with pytest.raises(UsageError):
            dropout_apply(np.ones(3), 0.5, training=True)


class TestDense:
    def test_identity_weights_with_bias(self):
        p = DenseParams(np.eye(2), np.array([1.0, -5.0]), "relu")
        np.testing.assert_array_equal(dense_forward(np.array([[1.0, 2.0]]), p), [[2.0, 0.0]])

    def test_time_distributed_matches_per_step(self, rng):
        p = DenseParams.init(4, 3, "relu", rng)
        x = rng.normal(size=(2, 5, 4))
        out = dense_forward(x, p)
        assert out.shape == (2, 5, 3)
        for t in range(5):
            np.testing.assert_allclose(out[:, t], dense_forward(x[:, t], p))

    def test_wrong_input_width(self, rng):
        with pytest.raises(DimensionError):
            dense_forward(np.ones((2, 5)), DenseParams.init(4, 3, "linear", rng))

    def test_unknown_activation(self, rng):
        with pytest.raises(ConfigurationError):
            DenseParams.init(4, 3, "tanh", rng)


class TestAttention:
    def test_output_shape_and_weight_rows(self, rng):
        p = AttentionParams.init(16, 8, 64, 0.1, rng)
        layer = MultiHeadAttention("attention", p)
        out = layer.forward(rng.normal(size=(4, 3, 16)))
        assert out.shape == (4, 3, 16)
        weights = layer.cache["weights"]
        assert weights.shape == (4, 8, 3, 3)
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-9)

    def test_inference_is_deterministic(self, rng):
        p = AttentionParams.init(8, 2, 4, 0.5, rng)
        x = rng.normal(size=(2, 3, 8))
        np.testing.assert_array_equal(attention_forward(x, p), attention_forward(x, p))

    def test_dropout_changes_training_output(self, rng):
        p = AttentionParams.init(8, 2, 4, 0.5, rng)
        x = rng.normal(size=(2, 3, 8))
        trained = attention_forward(x, p, training=True, rng=np.random.default_rng(0))
        assert not np.allclose(trained, attention_forward(x, p))

    def test_single_step_attends_to_itself(self, rng):
        layer = MultiHeadAttention("attention", AttentionParams.init(8, 2, 4, 0.0, rng))
        layer.forward(rng.normal(size=(3, 1, 8)))
        np.testing.assert_array_equal(layer.cache["weights"], 1.0)

    def test_model_dim_mismatch(self, rng):
        p = AttentionParams.init(8, 2, 4, 0.1, rng)
        with pytest.raises(DimensionError):
            attention_forward(np.ones((1, 3, 6)), p)

    def test_non_finite_output_names_the_layer(self, rng):
        p = AttentionParams.init(4, 1, 2, 0.0, rng)
        p.bo[0] = np.nan
        with pytest.raises(NumericError, match="attention"):
            attention_forward(np.ones((1, 3, 4)), p)


class TestLayerNorm:
    def test_standardizes_each_position(self, rng):
        x = rng.normal(3.0, 5.0, size=(4, 3, 16))
        out = layer_norm_forward(x, LayerNormParams.init(16, epsilon=1e-12))
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)

    def test_constant_input_maps_to_bias(self):
        p = LayerNormParams(np.full(4, 2.0), np.arange(4.0))
        np.testing.assert_allclose(layer_norm_forward(np.full((1, 4), 7.0), p), [np.arange(4.0)])


class TestLoss:
    def test_mse_and_gradient(self):
        pred = np.array([[1.0, 2.0]])
        target = np.array([[0.0, 0.0]])
        assert mse_loss(pred, target) == 2.5
        np.testing.assert_allclose(mse_loss_grad(pred, target), [[1.0, 2.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mse_loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestGradientTape:
    def test_unknown_parameter(self):
        tape = GradientTape({"a": np.zeros(2)})
        with pytest.raises(UsageError):
            tape.accumulate("b", np.zeros(2))

    def test_shape_mismatch(self):
        tape = GradientTape({"a": np.zeros(2)})
        with pytest.raises(DimensionError):
            tape.accumulate("a", np.zeros(3))

    def test_backward_without_forward(self, rng):
        layer = Dense("dense", DenseParams.init(2, 2, "relu", rng))
        tape = GradientTape(layer.params())
        with pytest.raises(UsageError):
            layer.backward(np.ones((1, 2)), tape)


class TestOptimizerStep:
    def test_updates_in_place(self):
        params = {"w": np.array([1.0, 2.0])}
        view = params["w"]
        tape = GradientTape(params)
        tape.accumulate("w", np.array([1.0, -1.0]))
        optimizer_step(params, tape, 0.5)
        np.testing.assert_allclose(view, [0.5, 2.5])

    @pytest.mark.parametrize("lr", [0.0, -0.1])
    def test_rejects_non_positive_rate(self, lr):
        params = {"w": np.zeros(2)}
        with pytest.raises(ConfigurationError):
            optimizer_step(params, GradientTape(params), lr)

    def test_non_finite_update_leaves_all_parameters(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        tape = GradientTape(params)
        tape.accumulate("a", np.ones(2))
        tape.accumulate("b", np.array([np.inf, 0.0]))
        with pytest.raises(NumericError):
            optimizer_step(params, tape, 0.1)
        np.testing.assert_array_equal(params["a"], 1.0)
        np.testing.assert_array_equal(params["b"], 1.0)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    diff = np.linalg.norm(analytic - numeric)
    if diff < 1e-9:
        return 0.0
    return diff / scale


class TestGradientFidelity:
    """Backprop through the whole forecaster against central differences."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_full_model(self, seed):
        config = ModelConfig(
            td_dense_units=8, heads=2, head_dim=8, dense_units=8, attn_dropout=0.1
        )
        model = build_model(config, seed)
        rng = np.random.default_rng(100 + seed)
        x = rng.normal(size=(3, config.lookback_steps, config.feature_count))
        y = rng.normal(size=(3, config.horizon))

        params = model.params()
        tape = GradientTape(params)
        pred = model.forward(x, training=False)
        backward(model.network, tape, mse_loss_grad(pred, y))

        h = 1e-4
        for name, value in params.items():
            numeric = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                original = value[idx]
                value[idx] = original + h
                up = mse_loss(model.forward(x), y)
                value[idx] = original - h
                down = mse_loss(model.forward(x), y)
                value[idx] = original
                numeric[idx] = (up - down) / (2 * h)
            assert _relative_error(tape[name], numeric) < 1e-3, name


def _attention_by_loops(x, p):
    batch, steps, _ = x.shape
    out = np.zeros((batch, steps, p.model_dim))
    for b in range(batch):
        heads = []
        for h in range(p.head_count):
            cols = slice(h * p.head_dim, (h + 1) * p.head_dim)
            q = x[b] @ p.wq[:, cols] + p.bq[cols]
            k = x[b] @ p.wk[:, cols] + p.bk[cols]
            v = x[b] @ p.wv[:, cols] + p.bv[cols]
            context = np.zeros((steps, p.head_dim))
            for i in range(steps):
                scores = np.array([q[i] @ k[j] for j in range(steps)]) / np.sqrt(p.head_dim)
                weights = np.exp(scores - scores.max())
                weights /= weights.sum()
                for j in range(steps):
                    context[i] += weights[j] * v[j]
            heads.append(context)
        out[b] = np.concatenate(heads, axis=1) @ p.wo + p.bo
    return out


class TestOracles:
    def test_attention_matches_loops(self):
        rng = np.random.default_rng(5)
        p = AttentionParams.init(6, 2, 3, 0.0, rng)
        p.bq[:] = rng.normal(size=p.bq.shape)
        p.bv[:] = rng.normal(size=p.bv.shape)
        x = rng.normal(size=(2, 3, 6))
        np.testing.assert_allclose(attention_forward(x, p), _attention_by_loops(x, p), atol=1e-8)

    def test_zero_keys_average_the_values(self, rng):
        p = AttentionParams.init(4, 2, 2, 0.0, rng)
        p.wk[:] = 0.0
        layer = MultiHeadAttention("attention", p)
        x = rng.normal(size=(1, 3, 4))
        out = layer.forward(x)
        np.testing.assert_allclose(layer.cache["weights"], 1.0 / 3.0, atol=1e-12)
        mean_value = (x[0] @ p.wv + p.bv).mean(axis=0)
        np.testing.assert_allclose(out[0], np.tile(mean_value @ p.wo + p.bo, (3, 1)), atol=1e-12)

    def test_dense_matches_loops(self, rng):
        p = DenseParams.init(5, 4, "linear", rng)
        x = rng.normal(size=(6, 5))
        expected = np.zeros((6, 4))
        for n in range(6):
            for o in range(4):
                expected[n, o] = p.bias[o]
                for i in range(5):
                    expected[n, o] += x[n, i] * p.weights[i, o]
        np.testing.assert_allclose(dense_forward(x, p), expected, atol=1e-10)

    def test_layer_norm_two_values(self):
        p = LayerNormParams(np.full(2, 2.0), np.ones(2), epsilon=1e-12)
        np.testing.assert_allclose(layer_norm_forward(np.array([[1.0, -1.0]]), p), [[3.0, -1.0]])


class TestBackward:
    def test_linear_layer_closed_form(self, rng):
        layer = Dense("dense", DenseParams.init(4, 1, "linear", rng))
        x = rng.normal(size=(10, 4))
        y = rng.normal(size=(10, 1))
        tape = GradientTape(layer.params())
        pred = layer.forward(x)
        layer.backward(mse_loss_grad(pred, y), tape)
        residual = x @ layer.p.weights + layer.p.bias - y
        np.testing.assert_allclose(tape["dense.weights"], 2.0 * x.T @ residual / 10, atol=1e-12)
        np.testing.assert_allclose(tape["dense.bias"], 2.0 * residual.sum(axis=0) / 10, atol=1e-12)

    def test_zero_loss_gradient_gives_zero_gradients(self, rng, tiny_config):
        model = build_model(tiny_config, seed=0)
        tape = GradientTape(model.params())
        pred = model.forward(rng.normal(size=(4, 3, 12)))
        backward(model.network, tape, np.zeros_like(pred))
        for name, grad in tape.items():
            np.testing.assert_array_equal(grad, 0.0, err_msg=name)

    def test_same_seed_same_step(self, tiny_config):
        results = []
        for _ in range(2):
            model = build_model(tiny_config, seed=3)
            rng = np.random.default_rng(11)
            x = rng.normal(size=(4, 3, 12))
            y = rng.normal(size=(4, 24))
            params = model.params()
            tape = GradientTape(params)
            pred = model.forward(x, training=True, rng=rng)
            backward(model.network, tape, mse_loss_grad(pred, y))
            grads = {name: grad.copy() for name, grad in tape.items()}
            optimizer_step(params, tape, 0.01)
            results.append((grads, {name: value.copy() for name, value in params.items()}))
        (first_grads, first_params), (second_grads, second_params) = results
        for name in first_grads:
            np.testing.assert_array_equal(first_grads[name], second_grads[name])
            np.testing.assert_array_equal(first_params[name], second_params[name])


def test_descent_on_a_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    params = {"w": np.zeros(3)}
    tape = GradientTape(params)
    losses = []
    for _ in range(200):
        losses.append(float(np.sum((params["w"] - target) ** 2)))
        tape.zero()
        tape.accumulate("w", 2.0 * (params["w"] - target))
        optimizer_step(params, tape, 0.05)
    losses.append(float(np.sum((params["w"] - target) ** 2)))
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-6


def test_dropout_keeps_half_at_rate_one_half(rng):
    out = dropout_apply(np.ones(100_000), 0.5, training=True, rng=rng)
    survivors = out[out != 0.0]
    np.testing.assert_array_equal(survivors, 2.0)
    assert survivors.size / out.size == pytest.approx(0.5, abs=0.05)
