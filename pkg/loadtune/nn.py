"""Dense, multi-head attention, layer normalization and dropout layers with
explicit forward and backward passes, the MSE loss and a plain gradient
descent step.

Layers cache what they need during ``forward`` and write parameter gradients
into a :class:`GradientTape` during ``backward``. Parameters are plain numpy
arrays owned by the ``*Params`` dataclasses; the optimizer updates them in
place, so every view handed out by ``params()`` stays valid.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError, UsageError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "linear")
LAYER_NORM_EPSILON = 1e-5


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x) -> np.ndarray:
    # zero at zero
    return (np.asarray(x) > 0).astype(float)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return shifted / np.sum(shifted, axis=axis, keepdims=True)


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def check_dropout_rate(rate: float):
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")


def dropout_mask(shape: Tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    check_dropout_rate(rate)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout_apply(
    x: np.ndarray,
    rate: float,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` while
    training, inference returns ``x`` itself.
    """
    check_dropout_rate(rate)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("training-mode dropout needs a random generator")
    return x * dropout_mask(x.shape, rate, rng)


@dataclass
class DenseParams:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation '{self.activation}'")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise DimensionError(
                f"weights {self.weights.shape} and bias {self.bias.shape} do not match"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def init(
        cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator
    ) -> "DenseParams":
        return cls(glorot_uniform(in_dim, out_dim, rng), np.zeros(out_dim), activation)


@dataclass
class AttentionParams:
    head_count: int
    head_dim: int
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.head_count < 1 or self.head_dim < 1:
            raise ConfigurationError("head_count and head_dim must be positive")
        check_dropout_rate(self.dropout_rate)
        width = self.head_count * self.head_dim
        model_dim = self.wq.shape[0]
        for name in ("wq", "wk", "wv"):
            if getattr(self, name).shape != (model_dim, width):
                raise DimensionError(f"{name} must be {model_dim}x{width}")
        for name in ("bq", "bk", "bv"):
            if getattr(self, name).shape != (width,):
                raise DimensionError(f"{name} must have length {width}")
        if self.wo.shape != (width, model_dim) or self.bo.shape != (model_dim,):
            raise DimensionError(f"output projection must be {width}x{model_dim}")

    @property
    def model_dim(self) -> int:
        return self.wq.shape[0]

    @property
    def width(self) -> int:
        return self.head_count * self.head_dim

    @classmethod
    def init(
        cls,
        model_dim: int,
        head_count: int,
        head_dim: int,
        dropout_rate: float,
        rng: np.random.Generator,
    ) -> "AttentionParams":
        width = head_count * head_dim
        return cls(
            head_count=head_count,
            head_dim=head_dim,
            wq=glorot_uniform(model_dim, width, rng),
            bq=np.zeros(width),
            wk=glorot_uniform(model_dim, width, rng),
            bk=np.zeros(width),
            wv=glorot_uniform(model_dim, width, rng),
            bv=np.zeros(width),
            wo=glorot_uniform(width, model_dim, rng),
            bo=np.zeros(model_dim),
            dropout_rate=dropout_rate,
        )


@dataclass
class LayerNormParams:
    gain: np.ndarray
    bias: np.ndarray
    epsilon: float = LAYER_NORM_EPSILON

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("layer norm epsilon must be positive")
        if self.gain.ndim != 1 or self.gain.shape != self.bias.shape:
            raise DimensionError("gain and bias must be vectors of equal length")

    @classmethod
    def init(cls, dim: int, epsilon: float = LAYER_NORM_EPSILON) -> "LayerNormParams":
        return cls(np.ones(dim), np.zeros(dim), epsilon)


class GradientTape:
    """Gradient buffers mirroring a set of named parameters."""

    def __init__(self, params: Dict[str, np.ndarray]):
        self.grads: Dict[str, np.ndarray] = {
            name: np.zeros_like(value) for name, value in params.items()
        }

    def zero(self):
        for grad in self.grads.values():
            grad.fill(0.0)

    def accumulate(self, name: str, grad: np.ndarray):
        try:
            target = self.grads[name]
        except KeyError:
            raise UsageError(f"no gradient buffer for parameter '{name}'") from None
        if grad.shape != target.shape:
            raise DimensionError(
                f"gradient {grad.shape} does not match parameter {target.shape}",
                layer=name,
            )
        target += grad

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.grads)

    def items(self):
        return self.grads.items()


class Layer:
    name: str = "layer"

    def params(self) -> Dict[str, np.ndarray]:
        return {}

    def forward(
        self,
        x: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, tape: GradientTape) -> np.ndarray:
        raise NotImplementedError

    def _require_cache(self, cache):
        if cache is None:
            raise UsageError(f"{self.name}: backward called without a cached forward pass")
        return cache


class Dense(Layer):
    """Affine map plus activation over the last axis. Applied to a
    ``batch x time x features`` tensor it is the time-distributed variant.
    """

    def __init__(self, name: str, params: DenseParams):
        self.name = name
        self.p = params
        self._cache: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def params(self) -> Dict[str, np.ndarray]:
        return {
            f"{self.name}.weights": self.p.weights,
            f"{self.name}.bias": self.p.bias,
        }

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.p.in_dim:
            raise DimensionError(
                f"expected {self.p.in_dim} input features, got {x.shape[-1]}",
                layer=self.name,
            )
        z = x @ self.p.weights + self.p.bias
        self._cache = (x, z)
        return relu(z) if self.p.activation == "relu" else z

    def backward(self, grad, tape):
        x, z = self._require_cache(self._cache)
        if self.p.activation == "relu":
            grad = grad * relu_grad(z)
        flat_x = x.reshape(-1, self.p.in_dim)
        flat_grad = grad.reshape(-1, self.p.out_dim)
        tape.accumulate(f"{self.name}.weights", flat_x.T @ flat_grad)
        tape.accumulate(f"{self.name}.bias", flat_grad.sum(axis=0))
        return grad @ self.p.weights.T


class MultiHeadAttention(Layer):
    """Scaled dot-product self-attention over ``batch x time x model_dim``.

    Heads are concatenated and projected back to ``model_dim``. Dropout acts
    on the attention weights and only in training mode.
    """

    def __init__(self, name: str, params: AttentionParams):
        self.name = name
        self.p = params
        self.cache: Optional[Dict[str, np.ndarray]] = None

    def params(self) -> Dict[str, np.ndarray]:
        return {
            f"{self.name}.{key}": getattr(self.p, key)
            for key in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
        }

    def _split(self, y: np.ndarray) -> np.ndarray:
        batch, steps, _ = y.shape
        return y.reshape(batch, steps, self.p.head_count, self.p.head_dim).transpose(
            0, 2, 1, 3
        )

    def _merge(self, y: np.ndarray) -> np.ndarray:
        batch, _, steps, _ = y.shape
        return y.transpose(0, 2, 1, 3).reshape(batch, steps, self.p.width)

    def forward(self, x, training=False, rng=None):
        p = self.p
        if x.ndim != 3 or x.shape[-1] != p.model_dim or x.shape[1] < 1:
            raise DimensionError(
                f"expected batch x time x {p.model_dim} input, got {x.shape}",
                layer=self.name,
            )
        q = self._split(x @ p.wq + p.bq)
        k = self._split(x @ p.wk + p.bk)
        v = self._split(x @ p.wv + p.bv)
        scores = (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(p.head_dim)
        weights = softmax(scores)
        mask = None
        dropped = weights
        if training and p.dropout_rate > 0.0:
            if rng is None:
                raise UsageError("training-mode dropout needs a random generator")
            mask = dropout_mask(weights.shape, p.dropout_rate, rng)
            dropped = weights * mask
        merged = self._merge(dropped @ v)
        out = merged @ p.wo + p.bo
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite attention output", layer=self.name)
        self.cache = {
            "x": x,
            "q": q,
            "k": k,
            "v": v,
            "weights": weights,
            "mask": mask,
            "dropped": dropped,
            "merged": merged,
        }
        return out

    def backward(self, grad, tape):
        cache = self._require_cache(self.cache)
        p = self.p
        batch, steps, model_dim = cache["x"].shape
        flat_x = cache["x"].reshape(-1, model_dim)
        flat_grad = grad.reshape(-1, model_dim)

        tape.accumulate(
            f"{self.name}.wo", cache["merged"].reshape(-1, p.width).T @ flat_grad
        )
        tape.accumulate(f"{self.name}.bo", flat_grad.sum(axis=0))

        d_context = self._split(grad @ p.wo.T)
        d_dropped = d_context @ cache["v"].transpose(0, 1, 3, 2)
        d_v = cache["dropped"].transpose(0, 1, 3, 2) @ d_context
        d_weights = d_dropped if cache["mask"] is None else d_dropped * cache["mask"]

        weights = cache["weights"]
        d_scores = weights * (
            d_weights - np.sum(d_weights * weights, axis=-1, keepdims=True)
        )
        d_scores = d_scores / np.sqrt(p.head_dim)
        d_q = d_scores @ cache["k"]
        d_k = d_scores.transpose(0, 1, 3, 2) @ cache["q"]

        d_x = np.zeros_like(flat_x)
        for key, d_proj in (("q", d_q), ("k", d_k), ("v", d_v)):
            flat = self._merge(d_proj).reshape(-1, p.width)
            tape.accumulate(f"{self.name}.w{key}", flat_x.T @ flat)
            tape.accumulate(f"{self.name}.b{key}", flat.sum(axis=0))
            d_x += flat @ getattr(p, f"w{key}").T
        return d_x.reshape(batch, steps, model_dim)


class LayerNorm(Layer):
    def __init__(self, name: str, params: LayerNormParams):
        self.name = name
        self.p = params
        self._cache: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def params(self) -> Dict[str, np.ndarray]:
        return {f"{self.name}.gain": self.p.gain, f"{self.name}.bias": self.p.bias}

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.p.gain.size:
            raise DimensionError(
                f"expected last dim {self.p.gain.size}, got {x.shape[-1]}",
                layer=self.name,
            )
        mean = x.mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + self.p.epsilon)
        normalized = (x - mean) * inv_std
        self._cache = (normalized, inv_std)
        return normalized * self.p.gain + self.p.bias

    def backward(self, grad, tape):
        normalized, inv_std = self._require_cache(self._cache)
        dim = normalized.shape[-1]
        tape.accumulate(
            f"{self.name}.gain", (grad * normalized).reshape(-1, dim).sum(axis=0)
        )
        tape.accumulate(f"{self.name}.bias", grad.reshape(-1, dim).sum(axis=0))
        d_norm = grad * self.p.gain
        return (inv_std / dim) * (
            dim * d_norm
            - d_norm.sum(axis=-1, keepdims=True)
            - normalized * (d_norm * normalized).sum(axis=-1, keepdims=True)
        )


class Flatten(Layer):
    name = "flatten"

    def __init__(self):
        self._shape: Optional[Tuple[int, ...]] = None

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad, tape):
        return grad.reshape(self._require_cache(self._shape))


class Residual(Layer):
    """``x + layer(x)``."""

    def __init__(self, layer: Layer):
        self.layer = layer
        self.name = layer.name

    def params(self) -> Dict[str, np.ndarray]:
        return self.layer.params()

    def forward(self, x, training=False, rng=None):
        return x + self.layer.forward(x, training, rng)

    def backward(self, grad, tape):
        return grad + self.layer.backward(grad, tape)


class Network:
    """A fixed stack of layers run in order."""

    def __init__(self, layers: Iterable[Layer]):
        self.layers: List[Layer] = list(layers)

    def params(self) -> Dict[str, np.ndarray]:
        merged: Dict[str, np.ndarray] = {}
        for layer in self.layers:
            merged.update(layer.params())
        return merged

    def parameter_count(self) -> int:
        return sum(value.size for value in self.params().values())

    def forward(
        self,
        x: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, grad: np.ndarray, tape: GradientTape) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad, tape)
        return grad


def dense_forward(x: np.ndarray, p: DenseParams) -> np.ndarray:
    return Dense("dense", p).forward(x)


def attention_forward(
    x: np.ndarray,
    p: AttentionParams,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    return MultiHeadAttention("attention", p).forward(x, training, rng)


def layer_norm_forward(x: np.ndarray, p: LayerNormParams) -> np.ndarray:
    return LayerNorm("norm", p).forward(x)


def _check_pair(pred: np.ndarray, target: np.ndarray):
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise DimensionError("empty prediction")


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mse_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    _check_pair(pred, target)
    return 2.0 * (pred - target) / pred.size


def backward(network: Network, tape: GradientTape, loss_grad: np.ndarray) -> GradientTape:
    network.backward(loss_grad, tape)
    return tape


def optimizer_step(
    params: Dict[str, np.ndarray], tape: GradientTape, lr: float
) -> Dict[str, np.ndarray]:
    """Plain gradient descent, ``theta <- theta - lr * grad``, in place.

    All updates are computed before any is applied, so a non-finite update
    leaves every parameter untouched.
    """
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be > 0, got {lr}")
    updated = {}
    for name, value in params.items():
        grad = tape[name]
        if grad.shape != value.shape:
            raise DimensionError(
                f"gradient {grad.shape} does not match parameter {value.shape}",
                layer=name,
            )
        step = value - lr * grad
        if not np.all(np.isfinite(step)):
            raise NumericError("non-finite parameter update, step aborted", layer=name)
        updated[name] = step
    for name, value in params.items():
        value[...] = updated[name]
    return params
