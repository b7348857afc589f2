"""Orchestration behind the ``loadtune`` subcommands. Each function takes
resolved settings, does its work and writes its outputs atomically; the CLI
only parses flags and prints.
"""

from dataclasses import dataclass
import logging
import os.path
from typing import List, Optional, Sequence, Tuple

from . import evo
from .benchmarks import get_benchmark
from .config import RunConfig
from .dataset import ScalerState, WindowedDataset, auto_split_spec, make_windows, split
from .errors import ConfigurationError, DataError, EmptyDatasetError
from .forecaster import (
    ForecastModel,
    build_model,
    fit,
    load_model,
    rolling_forecast,
    save_model,
)
from .loadcsv import CLEAN_COLUMNS, clean, generate_synthetic, load_csv, write_csv
from .report import (
    export_forecast,
    export_loss_curve,
    read_train_report,
    read_tune_report,
    write_train_report,
    write_tune_report,
)
from .tuner import TuneDatasets, report_render, tune
from .types import (
    ForecastPoint,
    Hyperparams,
    OptimizationResult,
    RawRecord,
    SplitSpec,
    TrainReport,
    TuneReport,
)
from .util import parse_date, read_json

logger = logging.getLogger(__name__)


def generate_data(hours: int, seed: int, out: str, noise: float = 15.0) -> int:
    records = generate_synthetic(hours, seed, noise)
    write_csv(records, out)
    logger.info("Wrote %d synthetic hours to %s", len(records), out)
    return len(records)


def preprocess(data: str, out: str) -> Tuple[int, int]:
    raw = load_csv(data)
    cleaned = clean(raw)
    write_csv(cleaned, out, CLEAN_COLUMNS)
    return len(raw), len(cleaned)


def load_records(data: Optional[str]) -> List[RawRecord]:
    if not data:
        raise ConfigurationError("no data CSV given (--data or paths.data)")
    records = clean(load_csv(data))
    if not records:
        raise EmptyDatasetError(f"{data} holds no usable rows")
    return records


def resolve_split(records: Sequence[RawRecord], cfg: RunConfig) -> SplitSpec:
    if cfg.split is not None:
        return cfg.split
    spec = auto_split_spec(records, cfg.data.test_share)
    logger.info("Derived split: train until %s, test until %s", spec.train_end, spec.test_end)
    return spec


def split_to_dict(spec: SplitSpec) -> dict:
    return {
        "train_end": spec.train_end.isoformat(),
        "test_end": spec.test_end.isoformat(),
        "val_fraction": spec.val_fraction,
    }


def split_from_dict(values: dict) -> SplitSpec:
    return SplitSpec(
        parse_date(values["train_end"]),
        parse_date(values["test_end"]),
        float(values["val_fraction"]),
    )


def run_tune(cfg: RunConfig) -> Tuple[TuneReport, Tuple[str, str]]:
    records = load_records(cfg.paths.data)
    datasets = TuneDatasets.prepare(records, resolve_split(records, cfg), cfg.data.features)
    report = tune(
        cfg.tuning.algorithm,
        cfg.search_space,
        datasets,
        budget=cfg.tuning.budget,
        seed=cfg.seeds.search,
        model_config=cfg.model_config(datasets.feature_count),
        epoch_cap=cfg.tuning.epoch_cap,
        workers=cfg.tuning.workers,
        population=cfg.tuning.population,
        model_seed=cfg.seeds.model,
    )
    return report, write_tune_report(report, cfg.paths.report_dir)


def hyperparams_from(report_path: Optional[str], hp: Hyperparams) -> Hyperparams:
    if report_path:
        return read_tune_report(report_path).hyperparams
    return hp


def run_train(
    cfg: RunConfig, hp: Hyperparams, model_out: str, report_out: Optional[str] = None
) -> TrainReport:
    """Train on the training windows, tracking validation loss, and save the
    bundle with everything ``forecast`` needs in its metadata."""
    records = load_records(cfg.paths.data)
    spec = resolve_split(records, cfg)
    datasets = TuneDatasets.prepare(records, spec, cfg.data.features)
    hp = hp.capped(cfg.tuning.epoch_cap)
    model = build_model(cfg.model_config(datasets.feature_count), cfg.seeds.model)
    curve = fit(model, datasets.train, datasets.val, hp, cfg.seeds.model)
    metadata = {
        "features": datasets.features,
        "scaler": datasets.scaler.to_dict(),
        "split": split_to_dict(spec),
        "hyperparams": {
            "batch_size": hp.batch_size,
            "epochs": hp.epochs,
            "learning_rate": hp.learning_rate,
        },
        "seed": cfg.seeds.model,
    }
    save_model(model, model_out, metadata)
    if report_out:
        write_train_report(curve, report_out, {"hyperparams": metadata["hyperparams"]})
    logger.info("Saved model to %s", model_out)
    return curve


@dataclass
class ForecastSource:
    model: ForecastModel
    windows: WindowedDataset
    scaler: ScalerState
    first_test_hour: int


def _forecast_source(model_path: str, data: Optional[str]) -> ForecastSource:
    model, metadata = load_model(model_path)
    try:
        scaler = ScalerState.from_dict(metadata["scaler"])
        features = metadata["features"]
        spec = split_from_dict(metadata["split"])
    except KeyError as exc:
        raise DataError(f"{model_path} lacks metadata {exc}") from None
    records = load_records(data)
    train, val, _ = split(records, spec)
    windows = make_windows(
        records, scaler, features, model.config.lookback_steps, model.config.horizon
    )
    return ForecastSource(model, windows, scaler, len(train) + len(val))


def default_start(source: ForecastSource) -> int:
    after = source.windows.index[source.windows.index >= source.first_test_hour]
    if after.size == 0:
        raise EmptyDatasetError("no forecast window starts after the training span")
    return int(after[0])


def run_forecast(
    model_path: str,
    data: Optional[str],
    start: Optional[int] = None,
    horizon: Optional[int] = None,
) -> List[ForecastPoint]:
    source = _forecast_source(model_path, data)
    if start is None:
        start = default_start(source)
    return rolling_forecast(source.model, source.windows, source.scaler, start, horizon)


EXPORT_KINDS = ("loss_curve", "forecast24", "nth_hour")


def export_plots(
    kind: str,
    out: str,
    report: Optional[str] = None,
    model_path: Optional[str] = None,
    data: Optional[str] = None,
    start: Optional[int] = None,
) -> str:
    """Writes one plot-data file and returns a one-line summary."""
    if kind == "loss_curve":
        if not report:
            raise ConfigurationError("loss_curve needs --report")
        rows = export_loss_curve(read_train_report(report), out)
        return f"{rows} epochs written to {out}"

    if kind not in EXPORT_KINDS:
        raise ConfigurationError(f"unknown export kind '{kind}'")
    if not model_path:
        raise ConfigurationError(f"{kind} needs --model")
    if kind == "nth_hour" and start is None:
        raise ConfigurationError("nth_hour needs --start")
    points = run_forecast(model_path, data, start)
    score = export_forecast(points, out)
    return f"{len(points)} hours from hour {points[0].hour_index} written to {out}, MAPE {score:.2f}%"


@dataclass
class BenchOutcome:
    suite: str
    algorithm: str
    result: OptimizationResult
    threshold: float
    seed: int = 0

    @property
    def passed(self) -> bool:
        return self.result.best.fitness <= self.threshold

    def summary(self) -> str:
        return (
            f"{self.suite} {self.algorithm} seed={self.seed}: best {self.result.best.fitness:.6g} "
            f"after {self.result.evaluations} evaluations, threshold {self.threshold:g} "
            f"-> {'PASS' if self.passed else 'FAIL'}"
        )


def run_bench(suite: str, algorithm: str, seed: int) -> BenchOutcome:
    bench = get_benchmark(suite)
    if algorithm not in bench.thresholds:
        raise ConfigurationError(f"no {suite} threshold for algorithm '{algorithm}'")
    objective = evo.Objective(bench.function, bench.bounds)
    if algorithm == "de":
        result = evo.de_run(
            evo.DEConfig(population=bench.population, max_generations=bench.generations, seed=seed),
            objective,
        )
    elif algorithm == "ga":
        result = evo.ga_run(
            evo.GAConfig(population=bench.population, generations=bench.generations, seed=seed),
            objective,
        )
    elif algorithm == "pso":
        result = evo.pso_run(
            evo.PSOConfig(swarm_size=bench.population, iterations=bench.generations, seed=seed),
            objective,
        )
    else:
        result = evo.random_run(
            evo.RandomSearchConfig(
                samples=bench.population * (bench.generations + 1),
                batch_size=bench.population,
                seed=seed,
            ),
            objective,
        )
    return BenchOutcome(suite, algorithm, result, bench.thresholds[algorithm], seed)


def render_reports(paths: Sequence[str]) -> str:
    return report_render([read_tune_report(path) for path in paths])


def _is_tune_report(path: str) -> bool:
    try:
        values = read_json(path)
    except (OSError, ValueError):
        return False
    return isinstance(values, dict) and "algorithm" in values


def report_paths(report_dir: str) -> List[str]:
    """Tune reports in ``report_dir``. Train reports and other JSON are skipped."""
    if not os.path.isdir(report_dir):
        return []
    paths = sorted(
        os.path.join(report_dir, name)
        for name in os.listdir(report_dir)
        if name.endswith(".json")
    )
    return [path for path in paths if _is_tune_report(path)]
