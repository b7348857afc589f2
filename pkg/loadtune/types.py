from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import ConfigurationError


@dataclass
class RawRecord:
    timestamp: datetime
    year: int
    quarter: int
    month: int
    week_of_year: int
    day_of_year: int
    hour_of_day: int
    day_of_week: int
    day_type: int
    state_holiday: int
    temperature: Optional[float] = None
    dew_point: Optional[float] = None
    relative_humidity: Optional[float] = None
    wind_speed: Optional[float] = None
    visibility: Optional[float] = None
    precipitation: Optional[float] = None
    daily_peak: Optional[float] = None
    hourly_demand: Optional[float] = None


@dataclass(frozen=True)
class SplitSpec:
    train_end: date
    test_end: date
    val_fraction: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError(
                f"val_fraction must be in (0, 1), got {self.val_fraction}"
            )
        if self.train_end >= self.test_end:
            raise ConfigurationError(
                f"train_end {self.train_end} must precede test_end {self.test_end}"
            )


@dataclass(frozen=True)
class Hyperparams:
    batch_size: int
    epochs: int
    learning_rate: float

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigurationError(
                f"learning_rate must be > 0, got {self.learning_rate}"
            )

    def capped(self, epoch_cap: Optional[int]) -> "Hyperparams":
        if epoch_cap is None or epoch_cap >= self.epochs:
            return self
        return Hyperparams(self.batch_size, epoch_cap, self.learning_rate)


MANUAL_HYPERPARAMS = Hyperparams(batch_size=32, epochs=50, learning_rate=0.01)


@dataclass
class TrainReport:
    train_loss: List[float]
    val_loss: List[float]
    wall_time: float
    epochs: int


@dataclass
class ForecastPoint:
    hour_index: int
    timestamp: datetime
    actual_mw: float
    predicted_mw: float


@dataclass
class EvalResult:
    mse: float
    mape: float
    count: int


@dataclass
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.lower.size < 1 or self.lower.shape != self.upper.shape:
            raise ConfigurationError("bounds need matching, non-empty lower/upper")
        if not np.all(self.lower < self.upper):
            raise ConfigurationError("every lower bound must be below its upper bound")

    @classmethod
    def uniform(cls, dimension: int, lower: float, upper: float) -> "Bounds":
        return cls(np.full(dimension, lower), np.full(dimension, upper))

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def clip(self, genome: np.ndarray) -> np.ndarray:
        return np.clip(genome, self.lower, self.upper)

    def contains(self, genome: np.ndarray) -> bool:
        return bool(np.all(genome >= self.lower) and np.all(genome <= self.upper))


@dataclass
class Candidate:
    genome: np.ndarray
    fitness: Optional[float] = None

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


@dataclass
class OptimizationResult:
    algorithm: str
    best: Candidate
    history: List[float]
    evaluations: int
    discarded: int = 0


@dataclass
class TuneReport:
    algorithm: str
    hyperparams: Hyperparams
    best_val_mse: float
    test_mse: float
    test_mape: float
    history: List[float]
    evaluations: int
    budget: int
    wall_time: float
    seeds: Dict[str, int]
    epoch_cap: Optional[int] = None
    settings: Dict[str, Any] = field(default_factory=dict)
    best_curve: Optional[TrainReport] = None
