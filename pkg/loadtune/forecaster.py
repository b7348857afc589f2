"""The attention-based load forecaster: time-distributed dense, multi-head
self-attention, layer normalization, flatten, two hidden dense layers and a
linear 24-hour output, trained with minibatch gradient descent on MSE.
"""

from dataclasses import asdict, dataclass
from datetime import timedelta
import json
import logging
import time
import zipfile
from typing import Dict, List, Optional, Tuple

import numpy as np

from .dataset import TARGET, ScalerState, WindowedDataset
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    DivergenceError,
    NumericError,
)
from .nn import (
    AttentionParams,
    Dense,
    DenseParams,
    Flatten,
    GradientTape,
    Layer,
    LayerNorm,
    LayerNormParams,
    MultiHeadAttention,
    Network,
    Residual,
    check_dropout_rate,
    mse_loss,
    mse_loss_grad,
    optimizer_step,
)
from .types import ForecastPoint, Hyperparams, TrainReport
from .util import atomic_write

logger = logging.getLogger(__name__)

BUNDLE_VERSION = 1
PARAM_PREFIX = "param."
PREDICT_CHUNK = 4096


@dataclass(frozen=True)
class ModelConfig:
    lookback_steps: int = 3
    feature_count: int = 12
    td_dense_units: int = 64
    heads: int = 8
    head_dim: int = 64
    attn_dropout: float = 0.1
    dense_units: int = 64
    dense_layers: int = 2
    horizon: int = 24
    residual: bool = False
    norm_epsilon: float = 1e-5

    def __post_init__(self):
        for name in (
            "lookback_steps",
            "feature_count",
            "td_dense_units",
            "heads",
            "head_dim",
            "dense_units",
            "dense_layers",
            "horizon",
        ):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        check_dropout_rate(self.attn_dropout)
        if not self.norm_epsilon > 0:
            raise ConfigurationError("norm_epsilon must be positive")

    @property
    def input_nodes(self) -> int:
        return self.lookback_steps * self.feature_count


MODEL_PRESETS: Dict[str, ModelConfig] = {
    "full": ModelConfig(),
    "desk": ModelConfig(td_dense_units=16, heads=2, head_dim=8, dense_units=16),
}


class ForecastModel:
    def __init__(self, config: ModelConfig, network: Network):
        self.config = config
        self.network = network

    def params(self) -> Dict[str, np.ndarray]:
        return self.network.params()

    def parameter_count(self) -> int:
        return self.network.parameter_count()

    @property
    def output_layer(self) -> Dense:
        return self.network.layers[-1]

    @property
    def attention(self) -> MultiHeadAttention:
        layer = self.network.layers[1]
        return layer.layer if isinstance(layer, Residual) else layer

    def check_inputs(self, x: np.ndarray):
        expected = (self.config.lookback_steps, self.config.feature_count)
        if x.ndim != 3 or x.shape[1:] != expected:
            raise DimensionError(
                f"expected batch x {expected[0]} x {expected[1]} windows, got {x.shape}"
            )

    def forward(
        self,
        x: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        self.check_inputs(x)
        return self.network.forward(x, training, rng)


def build_model(config: ModelConfig, seed: int) -> ForecastModel:
    rng = np.random.default_rng(seed)
    attention: Layer = MultiHeadAttention(
        "attention",
        AttentionParams.init(
            config.td_dense_units, config.heads, config.head_dim, config.attn_dropout, rng
        ),
    )
    if config.residual:
        attention = Residual(attention)

    layers = [
        Dense(
            "time_distributed",
            DenseParams.init(config.feature_count, config.td_dense_units, "relu", rng),
        ),
        attention,
        LayerNorm("norm", LayerNormParams.init(config.td_dense_units, config.norm_epsilon)),
        Flatten(),
    ]
    width = config.lookback_steps * config.td_dense_units
    for i in range(1, config.dense_layers + 1):
        layers.append(
            Dense(f"dense_{i}", DenseParams.init(width, config.dense_units, "relu", rng))
        )
        width = config.dense_units
    layers.append(Dense("output", DenseParams.init(width, config.horizon, "linear", rng)))
    return ForecastModel(config, Network(layers))


def _check_dataset(model: ForecastModel, dataset: WindowedDataset, name: str):
    if len(dataset) == 0:
        raise ConfigurationError(f"{name} dataset is empty")
    model.check_inputs(dataset.inputs)
    if dataset.targets.shape[1:] != (model.config.horizon,):
        raise DimensionError(
            f"{name} targets have shape {dataset.targets.shape[1:]}, "
            f"model horizon is {model.config.horizon}"
        )


def predict_batch(model: ForecastModel, inputs: np.ndarray) -> np.ndarray:
    model.check_inputs(inputs)
    if inputs.shape[0] == 0:
        return np.zeros((0, model.config.horizon))
    return np.concatenate(
        [
            model.forward(inputs[i : i + PREDICT_CHUNK], training=False)
            for i in range(0, inputs.shape[0], PREDICT_CHUNK)
        ]
    )


def predict(model: ForecastModel, window: np.ndarray) -> np.ndarray:
    expected = (model.config.lookback_steps, model.config.feature_count)
    if window.shape != expected:
        raise DimensionError(f"expected a {expected} window, got {window.shape}")
    return model.forward(window[np.newaxis], training=False)[0]


def evaluate_loss(model: ForecastModel, dataset: WindowedDataset) -> float:
    return mse_loss(predict_batch(model, dataset.inputs), dataset.targets)


def fit(
    model: ForecastModel,
    train: WindowedDataset,
    val: Optional[WindowedDataset],
    hp: Hyperparams,
    seed: int,
) -> TrainReport:
    """Run exactly ``hp.epochs`` epochs of shuffled minibatch gradient
    descent; the last short batch is kept. Losses are full-pass MSE with
    dropout off. The model is updated in place.
    """
    _check_dataset(model, train, "training")
    if val is not None:
        _check_dataset(model, val, "validation")

    rng = np.random.default_rng(seed)
    params = model.params()
    tape = GradientTape(params)
    train_loss: List[float] = []
    val_loss: List[float] = []
    started = time.perf_counter()

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for epoch in range(1, hp.epochs + 1):
            order = rng.permutation(len(train))
            try:
                for start in range(0, len(train), hp.batch_size):
                    batch = order[start : start + hp.batch_size]
                    pred = model.forward(train.inputs[batch], training=True, rng=rng)
                    tape.zero()
                    model.network.backward(mse_loss_grad(pred, train.targets[batch]), tape)
                    optimizer_step(params, tape, hp.learning_rate)

                losses = [evaluate_loss(model, train)]
                if val is not None:
                    losses.append(evaluate_loss(model, val))
            except DimensionError:
                raise
            except NumericError as exc:
                raise DivergenceError(str(exc), epoch) from exc
            if not np.all(np.isfinite(losses)):
                raise DivergenceError("non-finite loss", epoch)

            train_loss.append(losses[0])
            if val is not None:
                val_loss.append(losses[1])
            logger.debug("epoch %d: train %.6f val %s", epoch, losses[0], losses[1:])

    return TrainReport(
        train_loss=train_loss,
        val_loss=val_loss,
        wall_time=time.perf_counter() - started,
        epochs=len(train_loss),
    )


def rolling_forecast(
    model: ForecastModel,
    dataset: WindowedDataset,
    scaler: ScalerState,
    start_index: int,
    horizon: Optional[int] = None,
) -> List[ForecastPoint]:
    """Forecast the ``horizon`` hours starting at source row ``start_index``
    and pair them with the actual demand, both in MW.
    """
    if horizon is None:
        horizon = model.config.horizon
    if not 1 <= horizon <= model.config.horizon:
        raise ConfigurationError(
            f"horizon must be in 1..{model.config.horizon}, got {horizon}"
        )
    position = dataset.position_of(start_index)
    predicted = scaler.inverse_column(TARGET, predict(model, dataset.inputs[position]))
    actual = scaler.inverse_column(TARGET, dataset.targets[position])
    start = dataset.timestamps[position]
    return [
        ForecastPoint(
            hour_index=start_index + h,
            timestamp=start + timedelta(hours=h),
            actual_mw=float(actual[h]),
            predicted_mw=float(predicted[h]),
        )
        for h in range(horizon)
    ]


def save_model(model: ForecastModel, path: str, metadata: Optional[dict] = None):
    arrays = {
        f"{PARAM_PREFIX}{name}": value for name, value in model.params().items()
    }
    arrays["version"] = np.array(BUNDLE_VERSION)
    arrays["config"] = np.array(json.dumps(asdict(model.config), sort_keys=True))
    arrays["metadata"] = np.array(json.dumps(metadata or {}, sort_keys=True))
    with atomic_write(path, "wb") as f:
        np.savez(f, **arrays)


def load_model(path: str) -> Tuple[ForecastModel, dict]:
    try:
        return _read_bundle(path)
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot load model bundle {path}: {exc}") from exc


def _read_bundle(path: str) -> Tuple[ForecastModel, dict]:
    with np.load(path, allow_pickle=False) as bundle:
        version = int(bundle["version"])
        if version != BUNDLE_VERSION:
            raise ConfigurationError(f"unsupported model bundle version {version}")
        config = ModelConfig(**json.loads(str(bundle["config"])))
        model = build_model(config, seed=0)
        for name, value in model.params().items():
            stored = bundle[f"{PARAM_PREFIX}{name}"]
            if stored.shape != value.shape:
                raise DimensionError(f"bundle parameter {name} has shape {stored.shape}")
            value[...] = stored
        metadata = json.loads(str(bundle["metadata"]))
    return model, metadata
