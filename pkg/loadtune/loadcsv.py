"""Hourly load CSV ingest, cleaning and the synthetic generator.

The CSV format: header row with the fixed column names in ``COLUMNS`` (any
order), comma separated, UTF-8, ISO-8601 hourly timestamps (an offset is
converted to UTC and dropped), and an empty cell for a missing value. ``precipitation``
may be omitted entirely.
"""

from dataclasses import replace
from datetime import datetime, timedelta, timezone
import csv
import logging
import math
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from dateutil.parser import parse as parse_datetime

from .errors import ConfigurationError, DataQualityError, IngestError
from .types import RawRecord
from .util import atomic_write, format_float, parse_optional_float

logger = logging.getLogger(__name__)

CALENDAR_COLUMNS = [
    "year",
    "quarter",
    "month",
    "week_of_year",
    "day_of_year",
    "hour_of_day",
    "day_of_week",
    "day_type",
    "state_holiday",
]
WEATHER_COLUMNS = [
    "temperature",
    "dew_point",
    "relative_humidity",
    "wind_speed",
    "visibility",
    "precipitation",
]
DEMAND_COLUMNS = ["daily_peak", "hourly_demand"]
COLUMNS = ["timestamp", *CALENDAR_COLUMNS, *WEATHER_COLUMNS, *DEMAND_COLUMNS]
OPTIONAL_COLUMNS = {"precipitation"}

# columns that survive cleaning and get their gaps interpolated
INTERPOLATED_COLUMNS = [
    "temperature",
    "dew_point",
    "relative_humidity",
    "wind_speed",
    "visibility",
    "daily_peak",
]
DROPPED_COLUMNS = ["precipitation"]
CLEAN_COLUMNS = [column for column in COLUMNS if column not in DROPPED_COLUMNS]
MAX_MISSING_SHARE = 0.5

HOUR = timedelta(hours=1)


def _parse_int(value: str) -> int:
    return int(float(value))


def _naive_utc(value: datetime) -> datetime:
    if value.tzinfo is None:
        return value
    return value.astimezone(timezone.utc).replace(tzinfo=None)


def _parse_row(line: Dict[str, str], row: int) -> RawRecord:
    values: Dict[str, object] = {}
    for column, raw in line.items():
        if column is None:
            raise IngestError("more cells than header columns", row)
        raw = (raw or "").strip()
        try:
            if column == "timestamp":
                if not raw:
                    raise ValueError("missing timestamp")
                values[column] = _naive_utc(parse_datetime(raw))
            elif column in CALENDAR_COLUMNS:
                if not raw:
                    raise ValueError("missing calendar value")
                values[column] = _parse_int(raw)
            else:
                value = parse_optional_float(raw)
                if value is not None and not math.isfinite(value):
                    raise ValueError("non-finite value")
                values[column] = value
        except ValueError as exc:
            raise IngestError(f"cannot parse '{raw}': {exc}", row, column) from None

    demand = values.get("hourly_demand")
    if demand is not None and demand < 0:
        raise IngestError(f"negative demand {demand}", row, "hourly_demand")
    return RawRecord(**values)


def read_records(file: TextIO) -> List[RawRecord]:
    reader = csv.DictReader(file)
    header = reader.fieldnames or []
    unknown = [name for name in header if name not in COLUMNS]
    if unknown:
        raise IngestError(f"unknown column(s): {', '.join(unknown)}", row=1)
    missing = [
        name for name in COLUMNS if name not in header and name not in OPTIONAL_COLUMNS
    ]
    if missing:
        raise IngestError(f"missing column(s): {', '.join(missing)}", row=1)

    # header is row 1
    return [_parse_row(line, row) for row, line in enumerate(reader, start=2)]


def load_csv(path: str) -> List[RawRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        records = read_records(f)
    logger.info("Loaded %d records from %s", len(records), path)
    return records


def write_csv(records: Sequence[RawRecord], path: str, columns: Sequence[str] = COLUMNS):
    with atomic_write(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for record in records:
            row = []
            for column in columns:
                value = getattr(record, column)
                if column == "timestamp":
                    row.append(value.isoformat())
                elif column in CALENDAR_COLUMNS:
                    row.append(str(value))
                else:
                    row.append(format_float(value))
            writer.writerow(row)


def segments(records: Sequence[RawRecord]) -> List[Tuple[int, int]]:
    """Half-open index ranges of runs with consecutive hourly timestamps."""
    if not records:
        return []
    result = []
    start = 0
    for i in range(1, len(records)):
        if records[i].timestamp - records[i - 1].timestamp != HOUR:
            result.append((start, i))
            start = i
    result.append((start, len(records)))
    return result


def _interpolate(times: np.ndarray, values: List[Optional[float]]) -> List[float]:
    known = np.array([v is not None for v in values])
    if known.all():
        return list(values)
    filled = np.interp(
        times,
        times[known],
        np.array([v for v in values if v is not None], dtype=float),
    )
    return [v if v is not None else float(f) for v, f in zip(values, filled)]


def clean(records: Sequence[RawRecord]) -> List[RawRecord]:
    """Sort, de-duplicate, drop precipitation and rows without demand, and
    fill gaps in the weather columns by linear interpolation over time
    (nearest value at the edges). Idempotent.
    """
    ordered: List[RawRecord] = []
    seen = set()
    for record in sorted(records, key=lambda r: r.timestamp):
        if record.timestamp in seen:
            continue
        seen.add(record.timestamp)
        ordered.append(record)

    if not ordered:
        return []

    for column in [*INTERPOLATED_COLUMNS, "hourly_demand"]:
        missing = sum(getattr(r, column) is None for r in ordered)
        if missing / len(ordered) > MAX_MISSING_SHARE:
            raise DataQualityError(
                f"column '{column}' is missing in {missing} of {len(ordered)} rows"
            )

    kept = [
        replace(r, precipitation=None)
        for r in ordered
        if r.hourly_demand is not None
    ]
    if len(kept) < len(ordered):
        logger.warning("Dropped %d rows without demand", len(ordered) - len(kept))

    times = np.array([(r.timestamp - kept[0].timestamp).total_seconds() for r in kept])
    columns = {
        column: _interpolate(times, [getattr(r, column) for r in kept])
        for column in INTERPOLATED_COLUMNS
    }
    cleaned = [
        replace(r, **{column: columns[column][i] for column in INTERPOLATED_COLUMNS})
        for i, r in enumerate(kept)
    ]

    gaps = len(segments(cleaned)) - 1
    if gaps:
        logger.info("Cleaned series has %d gap(s)", gaps)
    return cleaned


def calendar_fields(timestamp: datetime) -> Dict[str, int]:
    iso = timestamp.isocalendar()
    weekday = timestamp.weekday()
    holiday = int((timestamp.month, timestamp.day) in {(1, 1), (7, 1), (12, 25)})
    return {
        "year": timestamp.year,
        "quarter": (timestamp.month - 1) // 3 + 1,
        "month": timestamp.month,
        "week_of_year": iso[1],
        "day_of_year": timestamp.timetuple().tm_yday,
        "hour_of_day": timestamp.hour,
        "day_of_week": weekday,
        "day_type": int(weekday >= 5 or holiday),
        "state_holiday": holiday,
    }


SYNTHETIC_START = datetime(2017, 1, 1)


def synthetic_temperature(hours: np.ndarray, start: datetime = SYNTHETIC_START) -> np.ndarray:
    day_of_year = start.timetuple().tm_yday - 1 + hours / 24.0
    return (
        6.0
        + 14.0 * np.sin(2 * np.pi * (day_of_year - 110.0) / 365.25)
        + 4.0 * np.sin(2 * np.pi * (hours + start.hour - 9.0) / 24.0)
    )


def synthetic_demand(hours: np.ndarray, start: datetime = SYNTHETIC_START) -> np.ndarray:
    """Closed-form noiseless demand in MW for hour offsets from ``start``:
    base load, a daily and a weekly cycle, and a heating/cooling term.
    """
    hours = np.asarray(hours, dtype=float)
    hour_of_week = start.weekday() * 24 + start.hour + hours
    temperature = synthetic_temperature(hours, start)
    return (
        1200.0
        + 180.0 * np.sin(2 * np.pi * (hour_of_week - 8.0) / 24.0)
        + 90.0 * np.cos(2 * np.pi * hour_of_week / 168.0)
        + 6.0 * np.abs(temperature - 18.0)
    )


def generate_synthetic(
    hours: int, seed: int, noise: float = 15.0, start: datetime = SYNTHETIC_START
) -> List[RawRecord]:
    if hours < 48:
        raise ConfigurationError(f"need at least 48 hours, got {hours}")
    rng = np.random.default_rng(seed)
    offsets = np.arange(hours, dtype=float)
    temperature = synthetic_temperature(offsets, start) + noise / 10.0 * rng.normal(
        size=hours
    )
    demand = synthetic_demand(offsets, start) + noise * rng.normal(size=hours)
    daily_cycle = np.sin(2 * np.pi * offsets / 24.0)
    dew_point = temperature - 4.0 - 2.0 * daily_cycle
    humidity = np.clip(70.0 - 15.0 * daily_cycle + noise / 5.0 * rng.normal(size=hours), 5, 100)
    wind = np.abs(14.0 + 5.0 * np.cos(2 * np.pi * offsets / 37.0) + noise / 5.0 * rng.normal(size=hours))
    visibility = 20.0 + 4.0 * np.sin(2 * np.pi * offsets / 53.0)
    precipitation = np.clip(rng.gamma(0.3, 1.5, size=hours) - 0.4, 0.0, None)
    demand = np.clip(demand, 0.0, None)

    records = []
    for i in range(hours):
        timestamp = start + i * HOUR
        day = i // 24
        records.append(
            RawRecord(
                timestamp=timestamp,
                **calendar_fields(timestamp),
                temperature=float(temperature[i]),
                dew_point=float(dew_point[i]),
                relative_humidity=float(humidity[i]),
                wind_speed=float(wind[i]),
                visibility=float(visibility[i]),
                precipitation=float(precipitation[i]),
                daily_peak=float(demand[day * 24 : (day + 1) * 24].max()),
                hourly_demand=float(demand[i]),
            )
        )
    return records


