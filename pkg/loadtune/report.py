"""Serialization of tuning and training reports, and the column-oriented
plot-data exports (loss curves, forecasts)."""

import csv
import logging
import os.path
from typing import List, Optional, Sequence, Tuple

from slugify import slugify

from .errors import DataError
from .metrics import mape
from .tuner import algorithm_label
from .types import ForecastPoint, Hyperparams, TrainReport, TuneReport
from .util import atomic_write, format_float, read_json, write_json

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


def train_report_to_dict(report: TrainReport) -> dict:
    return {
        "epochs": report.epochs,
        "train_loss": list(report.train_loss),
        "val_loss": list(report.val_loss),
        "wall_time": report.wall_time,
    }


def train_report_from_dict(values: dict) -> TrainReport:
    return TrainReport(
        train_loss=[float(v) for v in values["train_loss"]],
        val_loss=[float(v) for v in values.get("val_loss", [])],
        wall_time=float(values.get("wall_time", 0.0)),
        epochs=int(values["epochs"]),
    )


def tune_report_to_dict(report: TuneReport) -> dict:
    hp = report.hyperparams
    return {
        "version": REPORT_VERSION,
        "algorithm": report.algorithm,
        "label": algorithm_label(report.algorithm),
        "hyperparams": {
            "batch_size": hp.batch_size,
            "epochs": hp.epochs,
            "learning_rate": hp.learning_rate,
        },
        "best_val_mse": report.best_val_mse,
        "test_mse": report.test_mse,
        "test_mape": report.test_mape,
        "evaluations": report.evaluations,
        "budget": report.budget,
        "epoch_cap": report.epoch_cap,
        "seeds": dict(report.seeds),
        # algorithm settings are defaults unless configured otherwise
        "settings": dict(report.settings),
        "history": list(report.history),
        "best_curve": (
            train_report_to_dict(report.best_curve) if report.best_curve else None
        ),
        "wall_time": report.wall_time,
    }


def tune_report_from_dict(values: dict) -> TuneReport:
    try:
        curve = values.get("best_curve")
        return TuneReport(
            algorithm=values["algorithm"],
            hyperparams=Hyperparams(**values["hyperparams"]),
            best_val_mse=float(values["best_val_mse"]),
            test_mse=float(values["test_mse"]),
            test_mape=float(values["test_mape"]),
            history=[float(v) for v in values["history"]],
            evaluations=int(values["evaluations"]),
            budget=int(values["budget"]),
            wall_time=float(values.get("wall_time", 0.0)),
            seeds={k: int(v) for k, v in values["seeds"].items()},
            epoch_cap=values.get("epoch_cap"),
            settings=dict(values.get("settings", {})),
            best_curve=train_report_from_dict(curve) if curve else None,
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed tune report: {exc!r}") from exc


def report_basename(report: TuneReport) -> str:
    return f"{slugify(algorithm_label(report.algorithm))}-seed{report.seeds['search']}"


def write_history_csv(history: Sequence[float], path: str):
    with atomic_write(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["generation", "best_fitness"])
        for generation, value in enumerate(history):
            writer.writerow([generation, format_float(value)])


def write_tune_report(report: TuneReport, out_dir: str) -> Tuple[str, str]:
    base = os.path.join(out_dir, report_basename(report))
    json_path = f"{base}.json"
    history_path = f"{base}-history.csv"
    write_json(json_path, tune_report_to_dict(report))
    write_history_csv(report.history, history_path)
    logger.info("Wrote %s and %s", json_path, history_path)
    return json_path, history_path


def read_tune_report(path: str) -> TuneReport:
    return tune_report_from_dict(read_json(path))


def write_train_report(report: TrainReport, path: str, metadata: Optional[dict] = None):
    write_json(path, {**(metadata or {}), **train_report_to_dict(report)})


def read_train_report(path: str) -> TrainReport:
    """Accepts a train report or a tune report, whose best candidate's
    curves are used."""
    values = read_json(path)
    if "best_curve" in values:
        if not values["best_curve"]:
            raise DataError(f"{path} holds no loss curves")
        values = values["best_curve"]
    try:
        return train_report_from_dict(values)
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed train report {path}: {exc!r}") from exc


def export_loss_curve(report: TrainReport, path: str) -> int:
    with atomic_write(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, train_loss in enumerate(report.train_loss, start=1):
            val_loss = (
                report.val_loss[epoch - 1] if epoch <= len(report.val_loss) else None
            )
            writer.writerow([epoch, format_float(train_loss), format_float(val_loss)])
    return len(report.train_loss)


def write_forecast(points: Sequence[ForecastPoint], path: str):
    with atomic_write(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["hour_index", "timestamp", "actual_mw", "predicted_mw"])
        for p in points:
            writer.writerow(
                [
                    p.hour_index,
                    p.timestamp.isoformat(),
                    format_float(p.actual_mw),
                    format_float(p.predicted_mw),
                ]
            )


def export_forecast(points: Sequence[ForecastPoint], path: str) -> float:
    """``hour,actual,predicted`` rows followed by a ``# mape,<value>`` line.
    Returns the MAPE."""
    score = mape([p.actual_mw for p in points], [p.predicted_mw for p in points])
    with atomic_write(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["hour", "actual", "predicted"])
        for hour, p in enumerate(points):
            writer.writerow([hour, format_float(p.actual_mw), format_float(p.predicted_mw)])
        f.write(f"# mape,{score!r}\n")
    return score


def read_export_mape(path: str) -> Optional[float]:
    with open(path, encoding="utf-8") as f:
        lines: List[str] = f.read().splitlines()
    for line in reversed(lines):
        if line.startswith("# mape,"):
            return float(line.split(",", 1)[1])
    return None
