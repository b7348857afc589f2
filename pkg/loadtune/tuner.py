"""Hyperparameter tuning of the forecaster: genomes in the unit cube are
decoded into batch size, epochs and learning rate, and their fitness is the
final validation MSE of a freshly trained model.
"""

from concurrent.futures import Future
from dataclasses import asdict, dataclass
import hashlib
import logging
import math
import threading
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import evo
from .dataset import (
    DEFAULT_FEATURES,
    HORIZON,
    LOOKBACK,
    TARGET,
    ScalerState,
    WindowedDataset,
    fit_scaler,
    make_windows,
    split,
)
from .errors import ConfigurationError, DivergenceError, OptimizationError, UsageError
from .forecaster import ModelConfig, build_model, fit, predict_batch
from .metrics import evaluate
from .types import (
    MANUAL_HYPERPARAMS,
    Bounds,
    Hyperparams,
    RawRecord,
    SplitSpec,
    TrainReport,
    TuneReport,
)

logger = logging.getLogger(__name__)

ALGORITHM_LABELS = {
    "manual": "Manual Selection",
    "ga": "Genetic Algorithm",
    "pso": "Particle Swarm",
    "de": "Differential Evolution",
    "random": "Random Search",
}
ALGORITHMS = list(ALGORITHM_LABELS)


def algorithm_label(algorithm: str) -> str:
    return ALGORITHM_LABELS.get(algorithm, algorithm)


@dataclass(frozen=True)
class SearchSpace:
    batch_min: int = 8
    batch_max: int = 256
    epochs_min: int = 10
    epochs_max: int = 1000
    lr_min: float = 1e-5
    lr_max: float = 0.5

    def __post_init__(self):
        if not 1 <= self.batch_min <= self.batch_max:
            raise ConfigurationError("batch size range must satisfy 1 <= min <= max")
        if not 1 <= self.epochs_min <= self.epochs_max:
            raise ConfigurationError("epoch range must satisfy 1 <= min <= max")
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigurationError("learning rate range must satisfy 0 < min <= max")

    @property
    def dimension(self) -> int:
        return 3

    @property
    def bounds(self) -> Bounds:
        return Bounds.uniform(self.dimension, 0.0, 1.0)


def _round(value: float) -> int:
    return int(math.floor(value + 0.5))


def decode(genome: Sequence[float], space: SearchSpace) -> Hyperparams:
    g = np.clip(np.asarray(genome, dtype=float), 0.0, 1.0)
    if g.shape != (space.dimension,):
        raise UsageError(f"expected a genome of {space.dimension} genes, got {g.shape}")
    log_lo = math.log10(space.lr_min)
    log_hi = math.log10(space.lr_max)
    return Hyperparams(
        batch_size=_round(space.batch_min + g[0] * (space.batch_max - space.batch_min)),
        epochs=_round(space.epochs_min + g[1] * (space.epochs_max - space.epochs_min)),
        learning_rate=10 ** (log_lo + g[2] * (log_hi - log_lo)),
    )


def report_digest(report: TrainReport) -> str:
    losses = np.array([*report.train_loss, *report.val_loss], dtype=float)
    return hashlib.sha256(losses.tobytes()).hexdigest()


@dataclass
class CacheEntry:
    fitness: float
    digest: Optional[str]
    report: Optional[TrainReport]


class FitnessCache:
    """Fitness per decoded hyperparameter set. Concurrent requests for the
    same key train once; the others wait for that result.
    """

    def __init__(self):
        self._entries: Dict[Hyperparams, "Future[CacheEntry]"] = {}
        self._lock = threading.Lock()
        self.misses = 0
        self.hits = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, hp: Hyperparams) -> bool:
        return hp in self._entries

    def get_or_compute(
        self, hp: Hyperparams, compute: Callable[[], CacheEntry]
    ) -> CacheEntry:
        with self._lock:
            future = self._entries.get(hp)
            owner = future is None
            if owner:
                future = Future()
                self._entries[hp] = future
                self.misses += 1
            else:
                self.hits += 1
        if not owner:
            logger.debug("Cache hit for %s", hp)
            return future.result()
        try:
            entry = compute()
        except BaseException as exc:
            future.set_exception(exc)
            raise
        future.set_result(entry)
        return entry

    def entry(self, hp: Hyperparams) -> Optional[CacheEntry]:
        future = self._entries.get(hp)
        return future.result() if future is not None else None


class TuneDatasets:
    """Windowed train/validation/test partitions sharing one scaler. Reads of
    ``test`` are counted.
    """

    def __init__(
        self,
        train: WindowedDataset,
        val: WindowedDataset,
        test: WindowedDataset,
        scaler: ScalerState,
        features: Sequence[str] = DEFAULT_FEATURES,
    ):
        self.train = train
        self.val = val
        self._test = test
        self.scaler = scaler
        self.features = list(features)
        self.test_accesses = 0

    @property
    def test(self) -> WindowedDataset:
        self.test_accesses += 1
        return self._test

    @property
    def feature_count(self) -> int:
        return len(self.features)

    @classmethod
    def prepare(
        cls,
        records: Sequence[RawRecord],
        spec: SplitSpec,
        features: Sequence[str] = DEFAULT_FEATURES,
        lookback: int = LOOKBACK,
        horizon: int = HORIZON,
    ) -> "TuneDatasets":
        train, val, test = split(records, spec)
        scaler = fit_scaler(train, features)
        offset = 0
        windows = []
        for part in (train, val, test):
            windows.append(
                make_windows(part, scaler, features, lookback, horizon, index_offset=offset)
            )
            offset += len(part)
        logger.info(
            "Prepared %d train / %d validation / %d test windows",
            *(len(w) for w in windows),
        )
        return cls(*windows, scaler, features)


def evaluate_candidate(
    hp: Hyperparams,
    datasets: TuneDatasets,
    model_config: ModelConfig,
    seed: int,
    epoch_cap: Optional[int] = None,
    cache: Optional[FitnessCache] = None,
) -> float:
    """Final-epoch validation MSE of a model trained with ``hp``; NaN when
    training diverges."""
    hp = hp.capped(epoch_cap)

    def compute() -> CacheEntry:
        model = build_model(model_config, seed)
        try:
            report = fit(model, datasets.train, datasets.val, hp, seed)
        except DivergenceError as exc:
            logger.warning("Training with %s diverged: %s", hp, exc)
            return CacheEntry(math.nan, None, None)
        logger.info("%s -> validation MSE %.6g", hp, report.val_loss[-1])
        return CacheEntry(report.val_loss[-1], report_digest(report), report)

    if cache is None:
        return compute().fitness
    return cache.get_or_compute(hp, compute).fitness


def _algorithm_config(algorithm: str, population: int, budget: int, seed: int):
    if algorithm == "de":
        return evo.DEConfig(population=population, max_generations=budget, seed=seed)
    if algorithm == "ga":
        return evo.GAConfig(
            population=population,
            tournament_size=min(3, population),
            elitism=min(2, population - 1),
            generations=budget,
            seed=seed,
        )
    if algorithm == "pso":
        return evo.PSOConfig(swarm_size=population, iterations=budget, seed=seed)
    return evo.RandomSearchConfig(samples=budget, batch_size=population, seed=seed)


RUNNERS = {
    "de": evo.de_run,
    "ga": evo.ga_run,
    "pso": evo.pso_run,
    "random": evo.random_run,
}


def tune(
    algorithm: str,
    space: SearchSpace,
    datasets: TuneDatasets,
    budget: int,
    seed: int,
    model_config: Optional[ModelConfig] = None,
    epoch_cap: Optional[int] = None,
    workers: int = 1,
    population: int = 10,
    model_seed: Optional[int] = None,
    cache: Optional[FitnessCache] = None,
) -> TuneReport:
    """Search hyperparameters with ``algorithm`` on the validation windows,
    retrain the winner on train+validation and score it once on the test
    windows, in MW.
    """
    if algorithm not in ALGORITHM_LABELS:
        raise UsageError(
            f"unknown algorithm '{algorithm}', expected one of {', '.join(ALGORITHMS)}"
        )
    model_config = model_config or ModelConfig(feature_count=datasets.feature_count)
    model_seed = seed if model_seed is None else model_seed
    cache = FitnessCache() if cache is None else cache
    if epoch_cap is not None and epoch_cap < 1:
        raise ConfigurationError(f"epoch cap must be >= 1, got {epoch_cap}")
    started = time.perf_counter()

    if algorithm == "manual":
        best_hp = MANUAL_HYPERPARAMS
        fitness = evaluate_candidate(
            best_hp, datasets, model_config, model_seed, epoch_cap, cache
        )
        if not math.isfinite(fitness):
            raise OptimizationError("manual hyperparameters diverged")
        history = [fitness]
        evaluations = 1
        settings: dict = {}
    else:
        if budget < population:
            raise ConfigurationError(
                f"budget {budget} is smaller than the population of {population}"
            )
        cfg = _algorithm_config(algorithm, population, budget, seed)
        objective = evo.Objective(
            lambda genome: evaluate_candidate(
                decode(genome, space), datasets, model_config, model_seed, epoch_cap, cache
            ),
            space.bounds,
            workers,
        )
        result = RUNNERS[algorithm](cfg, objective, max_evaluations=budget)
        best_hp = decode(result.best.genome, space)
        fitness = result.best.fitness
        history = result.history
        evaluations = result.evaluations
        settings = {k: v for k, v in asdict(cfg).items() if k != "seed"}

    logger.info("Best %s with validation MSE %.6g, retraining on train+val", best_hp, fitness)
    model = build_model(model_config, model_seed)
    fit(
        model,
        WindowedDataset.concat(datasets.train, datasets.val),
        None,
        best_hp.capped(epoch_cap),
        model_seed,
    )
    test = datasets.test
    predicted = datasets.scaler.inverse_column(TARGET, predict_batch(model, test.inputs))
    actual = datasets.scaler.inverse_column(TARGET, test.targets)
    scores = evaluate(actual, predicted)

    entry = cache.entry(best_hp.capped(epoch_cap))
    return TuneReport(
        algorithm=algorithm,
        hyperparams=best_hp,
        best_val_mse=float(fitness),
        test_mse=scores.mse,
        test_mape=scores.mape,
        history=[float(v) for v in history],
        evaluations=evaluations,
        budget=budget,
        wall_time=time.perf_counter() - started,
        seeds={"search": seed, "model": model_seed},
        epoch_cap=epoch_cap,
        settings=settings,
        best_curve=entry.report if entry else None,
    )


COLUMNS = ["Algorithm", "Batch", "Epochs", "Learning rate", "Val MSE", "MAPE (%)"]


def report_render(reports: Sequence[TuneReport]) -> str:
    """Plain-text comparison table, one row per report."""
    if not reports:
        raise UsageError("no reports to render")
    rows: List[List[str]] = [COLUMNS]
    for report in reports:
        hp = report.hyperparams
        rows.append(
            [
                algorithm_label(report.algorithm),
                str(hp.batch_size),
                str(hp.epochs),
                f"{hp.learning_rate:.4g}",
                f"{report.best_val_mse:.6g}",
                f"{report.test_mape:.2f}",
            ]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(COLUMNS))]
    lines = [
        "  ".join(
            cell.ljust(width) if i == 0 else cell.rjust(width)
            for i, (cell, width) in enumerate(zip(row, widths))
        )
        for row in rows
    ]
    lines.insert(1, "  ".join("-" * width for width in widths))
    caps = sorted({r.epoch_cap for r in reports if r.epoch_cap is not None})
    if caps:
        lines.append(f"epochs capped at {', '.join(str(c) for c in caps)}")
    return "\n".join(lines)
