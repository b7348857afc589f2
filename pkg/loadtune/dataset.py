"""Feature extraction, standardization, supervised windowing and the
date-based train/validation/test split.
"""

from dataclasses import dataclass, field
from datetime import datetime
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.preprocessing import StandardScaler

from .errors import ConfigurationError, DataError, EmptyDatasetError, RangeError, UsageError
from .loadcsv import segments
from .types import RawRecord, SplitSpec
from .util import end_of_day

logger = logging.getLogger(__name__)

TARGET = "hourly_demand"
LOOKBACK = 3
HORIZON = 24

DEFAULT_FEATURES = [
    "temperature",
    "dew_point",
    "relative_humidity",
    "wind_speed",
    "visibility",
    "hour_sin",
    "hour_cos",
    "dow_sin",
    "dow_cos",
    "month_sin",
    "month_cos",
    "hourly_demand",
]

# prefix -> (record field, period, offset)
CYCLIC_FEATURES: Dict[str, Tuple[str, int, int]] = {
    "hour": ("hour_of_day", 24, 0),
    "dow": ("day_of_week", 7, 0),
    "month": ("month", 12, 1),
}


def feature_column(records: Sequence[RawRecord], name: str) -> np.ndarray:
    prefix, _, kind = name.rpartition("_")
    if kind in ("sin", "cos") and prefix in CYCLIC_FEATURES:
        source, period, offset = CYCLIC_FEATURES[prefix]
        angle = 2 * np.pi * (
            np.array([getattr(r, source) for r in records], dtype=float) - offset
        ) / period
        return np.sin(angle) if kind == "sin" else np.cos(angle)

    if name == "timestamp" or name not in RawRecord.__dataclass_fields__:
        raise ConfigurationError(f"unknown feature '{name}'")
    values = [getattr(r, name) for r in records]
    if any(v is None for v in values):
        raise DataError(f"feature '{name}' has missing values, clean the records first")
    return np.array(values, dtype=float)


def feature_matrix(records: Sequence[RawRecord], features: Sequence[str]) -> np.ndarray:
    if not records:
        return np.zeros((0, len(features)))
    return np.column_stack([feature_column(records, name) for name in features])


@dataclass
class ScalerState:
    """Per-column standardization fitted on training rows only."""

    columns: List[str]
    scaler: StandardScaler

    @property
    def mean(self) -> np.ndarray:
        return self.scaler.mean_

    @property
    def std(self) -> np.ndarray:
        return self.scaler.scale_

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return self.scaler.transform(matrix)

    def inverse_transform(self, matrix: np.ndarray) -> np.ndarray:
        return self.scaler.inverse_transform(matrix)

    def _column(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise ConfigurationError(f"scaler has no column '{name}'") from None

    def transform_column(self, name: str, values: np.ndarray) -> np.ndarray:
        i = self._column(name)
        return (np.asarray(values, dtype=float) - self.mean[i]) / self.std[i]

    def inverse_column(self, name: str, values: np.ndarray) -> np.ndarray:
        i = self._column(name)
        return np.asarray(values, dtype=float) * self.std[i] + self.mean[i]

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }

    @classmethod
    def from_dict(cls, values: dict) -> "ScalerState":
        mean = np.array(values["mean"], dtype=float)
        std = np.array(values["std"], dtype=float)
        scaler = StandardScaler()
        scaler.mean_ = mean
        scaler.scale_ = std
        scaler.var_ = std ** 2
        scaler.n_features_in_ = mean.size
        scaler.n_samples_seen_ = 0
        return cls(list(values["columns"]), scaler)


def scaler_columns(features: Sequence[str]) -> List[str]:
    columns = list(features)
    if TARGET not in columns:
        columns.append(TARGET)
    return columns


def fit_scaler(
    train: Sequence[RawRecord], features: Sequence[str] = DEFAULT_FEATURES
) -> ScalerState:
    """Columns with zero spread keep a unit scale, so they map to zeros."""
    if not train:
        raise UsageError("cannot fit a scaler on an empty training slice")
    columns = scaler_columns(features)
    scaler = StandardScaler().fit(feature_matrix(train, columns))
    return ScalerState(columns, scaler)


@dataclass
class WindowedDataset:
    """Supervised pairs. ``index[i]`` is the source row of the first target
    hour of window ``i``; its inputs are the ``lookback`` rows before it.
    """

    inputs: np.ndarray
    targets: np.ndarray
    index: np.ndarray
    timestamps: List[datetime] = field(default_factory=list)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def position_of(self, hour_index: int) -> int:
        hits = np.flatnonzero(self.index == hour_index)
        if hits.size == 0:
            if len(self):
                bounds = f"{int(self.index.min())}..{int(self.index.max())}"
            else:
                bounds = "none"
            raise RangeError(
                f"no forecast window starts at hour {hour_index} "
                f"(valid starts {bounds}, gaps excluded)"
            )
        return int(hits[0])

    @classmethod
    def concat(cls, first: "WindowedDataset", second: "WindowedDataset") -> "WindowedDataset":
        return cls(
            np.concatenate([first.inputs, second.inputs]),
            np.concatenate([first.targets, second.targets]),
            np.concatenate([first.index, second.index]),
            [*first.timestamps, *second.timestamps],
        )


def window_count(length: int, lookback: int = LOOKBACK, horizon: int = HORIZON) -> int:
    return max(0, length - lookback - horizon + 1)


def make_windows(
    records: Sequence[RawRecord],
    scaler: ScalerState,
    features: Sequence[str] = DEFAULT_FEATURES,
    lookback: int = LOOKBACK,
    horizon: int = HORIZON,
    index_offset: int = 0,
) -> WindowedDataset:
    """Stride-1 windows inside each contiguous hourly segment. Inputs are the
    standardized features of hours ``[t - lookback, t)``, targets the
    standardized demand of hours ``[t, t + horizon)``.

    ``index_offset`` is added to the recorded row indices when ``records`` is
    a slice of a larger series.
    """
    scaled = scaler.transform(feature_matrix(records, scaler.columns))
    feature_idx = [scaler.columns.index(name) for name in features]
    target = scaled[:, scaler.columns.index(TARGET)]

    inputs, targets, index, timestamps = [], [], [], []
    for start, end in segments(records):
        count = window_count(end - start, lookback, horizon)
        if not count:
            continue
        # sliding_window_view puts the window axis last
        x = sliding_window_view(scaled[start:end, feature_idx], lookback, axis=0)
        y = sliding_window_view(target[start:end], horizon)
        inputs.append(x[:count].transpose(0, 2, 1))
        targets.append(y[lookback : lookback + count])
        rows = np.arange(start + lookback, start + lookback + count)
        index.append(rows + index_offset)
        timestamps.extend(records[t].timestamp for t in rows)

    if not inputs:
        raise EmptyDatasetError(
            f"no segment is long enough for {lookback}+{horizon} hour windows"
        )
    return WindowedDataset(
        np.ascontiguousarray(np.concatenate(inputs)),
        np.ascontiguousarray(np.concatenate(targets)),
        np.concatenate(index),
        timestamps,
    )


def split(
    records: Sequence[RawRecord], spec: SplitSpec
) -> Tuple[List[RawRecord], List[RawRecord], List[RawRecord]]:
    """Rows up to the end of ``train_end`` form the training span, whose
    chronologically last ``val_fraction`` becomes validation; rows after it up
    to the end of ``test_end`` are the test partition.
    """
    if any(b.timestamp < a.timestamp for a, b in zip(records, records[1:])):
        raise UsageError("records must be sorted by time before splitting")
    train_cutoff = end_of_day(spec.train_end)
    test_cutoff = end_of_day(spec.test_end)

    train_span = [r for r in records if r.timestamp <= train_cutoff]
    test = [r for r in records if train_cutoff < r.timestamp <= test_cutoff]
    n_val = int(round(len(train_span) * spec.val_fraction))
    train = train_span[: len(train_span) - n_val]
    val = train_span[len(train_span) - n_val :]

    for name, part in (("train", train), ("validation", val), ("test", test)):
        if not part:
            raise ConfigurationError(f"{name} partition is empty for {spec}")
    logger.info(
        "Split %d rows into %d train / %d validation / %d test",
        len(records),
        len(train),
        len(val),
        len(test),
    )
    return train, val, test


def auto_split_spec(
    records: Sequence[RawRecord], test_share: float = 0.2, val_fraction: float = 0.25
) -> SplitSpec:
    """Date boundaries for data without a fixed calendar split: the training
    span ends on the day holding the last ``1 - test_share`` row."""
    if not records:
        raise EmptyDatasetError("no records to split")
    if not 0.0 < test_share < 1.0:
        raise ConfigurationError(f"test_share must be in (0, 1), got {test_share}")
    cut = max(int(len(records) * (1.0 - test_share)) - 1, 0)
    return SplitSpec(
        train_end=records[cut].timestamp.date(),
        test_end=records[-1].timestamp.date(),
        val_fraction=val_fraction,
    )
