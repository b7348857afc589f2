from dataclasses import replace
from datetime import datetime, timedelta
import io

import numpy as np
import pytest

from loadtune.dataset import auto_split_spec, split
from loadtune.errors import ConfigurationError, DataQualityError, IngestError
from loadtune.loadcsv import (
    CLEAN_COLUMNS,
    COLUMNS,
    HOUR,
    calendar_fields,
    clean,
    generate_synthetic,
    load_csv,
    read_records,
    segments,
    synthetic_demand,
    write_csv,
)


def _csv(rows, columns=COLUMNS):
    lines = [",".join(columns)]
    lines.extend(",".join(row) for row in rows)
    return io.StringIO("\n".join(lines) + "\n")


def _row(**overrides):
    values = {
        "timestamp": "2017-01-02T05:00:00",
        "year": "2017",
        "quarter": "1",
        "month": "1",
        "week_of_year": "1",
        "day_of_year": "2",
        "hour_of_day": "5",
        "day_of_week": "0",
        "day_type": "0",
        "state_holiday": "0",
        "temperature": "-3.5",
        "dew_point": "-6.0",
        "relative_humidity": "80",
        "wind_speed": "12",
        "visibility": "24.1",
        "precipitation": "",
        "daily_peak": "1650",
        "hourly_demand": "1210.5",
    }
    values.update(overrides)
    return [values[column] for column in COLUMNS]


def _series(temperatures, demand=1000.0):
    start = datetime(2017, 3, 1)
    records = generate_synthetic(48, seed=0, start=start)[: len(temperatures)]
    return [
        replace(r, temperature=t, hourly_demand=demand)
        for r, t in zip(records, temperatures)
    ]


class TestReadRecords:
    def test_parses_a_row(self):
        (record,) = read_records(_csv([_row()]))
        assert record.timestamp == datetime(2017, 1, 2, 5)
        assert record.hour_of_day == 5
        assert record.temperature == -3.5
        assert record.precipitation is None
        assert record.hourly_demand == 1210.5

    def test_precipitation_column_is_optional(self):
        columns = [c for c in COLUMNS if c != "precipitation"]
        row = [v for c, v in zip(COLUMNS, _row()) if c != "precipitation"]
        (record,) = read_records(_csv([row], columns))
        assert record.precipitation is None

    def test_unknown_column(self):
        with pytest.raises(IngestError, match="row 1"):
            read_records(_csv([_row() + ["1"]], COLUMNS + ["extra"]))

    def test_missing_column(self):
        columns = [c for c in COLUMNS if c != "temperature"]
        with pytest.raises(IngestError, match="temperature"):
            read_records(_csv([], columns))

    def test_bad_value_names_row_and_column(self):
        with pytest.raises(IngestError) as info:
            read_records(_csv([_row(), _row(wind_speed="fast")]))
        assert info.value.row == 3
        assert info.value.column == "wind_speed"

    def test_negative_demand(self):
        with pytest.raises(IngestError, match="negative demand"):
            read_records(_csv([_row(hourly_demand="-1")]))

    def test_missing_timestamp(self):
        with pytest.raises(IngestError):
            read_records(_csv([_row(timestamp="")]))

    def test_offset_timestamps_become_naive_utc(self):
        rows = [
            _row(timestamp="2017-01-02T05:00:00+00:00"),
            _row(timestamp="2017-01-02T01:00:00-05:00"),
            _row(timestamp="2017-01-02T07:00:00"),
        ]
        records = read_records(_csv(rows))
        assert [r.timestamp for r in records] == [
            datetime(2017, 1, 2, 5),
            datetime(2017, 1, 2, 6),
            datetime(2017, 1, 2, 7),
        ]
        assert all(r.timestamp.tzinfo is None for r in records)

    def test_offset_csv_splits_like_a_naive_one(self, tmp_path):
        records = generate_synthetic(240, seed=2)
        path = tmp_path / "offset.csv"
        write_csv(records, str(path))
        lines = path.read_text().splitlines()
        shifted = [lines[0]] + [
            line.replace(",", "+00:00,", 1) for line in lines[1:]
        ]
        path.write_text("\n".join(shifted) + "\n")
        loaded = clean(load_csv(str(path)))
        spec = auto_split_spec(loaded)
        assert [len(part) for part in split(loaded, spec)] == [
            len(part) for part in split(clean(records), spec)
        ]

    def test_extra_cells(self):
        with pytest.raises(IngestError, match="more cells"):
            read_records(_csv([_row() + ["7"]]))

    def test_write_then_load(self, tmp_path):
        records = generate_synthetic(72, seed=1)
        path = str(tmp_path / "load.csv")
        write_csv(records, path)
        assert load_csv(path) == records


class TestSegments:
    def test_gap_splits_series(self):
        records = generate_synthetic(48, seed=0)
        records = records[:10] + records[13:]
        assert segments(records) == [(0, 10), (10, 45)]

    def test_empty(self):
        assert segments([]) == []


class TestClean:
    def test_interpolates_linearly_in_time(self):
        cleaned = clean(_series([1.0, None, None, 4.0]))
        assert [r.temperature for r in cleaned] == pytest.approx([1.0, 2.0, 3.0, 4.0])

    def test_edges_take_nearest_value(self):
        cleaned = clean(_series([None, 2.0, 5.0, None]))
        assert [r.temperature for r in cleaned] == [2.0, 2.0, 5.0, 5.0]

    def test_interpolation_spans_gaps_by_time(self):
        records = _series([0.0, None, 10.0, 0.0])
        # move the third row one hour later: the missing value sits at 1/3 of the span
        records[2] = replace(records[2], timestamp=records[2].timestamp + HOUR)
        records[3] = replace(records[3], timestamp=records[3].timestamp + HOUR)
        assert clean(records)[1].temperature == pytest.approx(10.0 / 3)

    def test_drops_precipitation_and_rows_without_demand(self):
        records = _series([1.0, 2.0, 3.0])
        records[1] = replace(records[1], hourly_demand=None)
        cleaned = clean(records)
        assert len(cleaned) == 2
        assert all(r.precipitation is None for r in cleaned)

    def test_sorts_and_drops_duplicates(self):
        records = _series([1.0, 2.0, 3.0])
        shuffled = [records[2], records[0], replace(records[0], temperature=99.0), records[1]]
        cleaned = clean(shuffled)
        assert [r.temperature for r in cleaned] == [1.0, 2.0, 3.0]

    def test_mostly_missing_column_is_rejected(self):
        with pytest.raises(DataQualityError, match="temperature"):
            clean(_series([1.0, None, None, None]))

    def test_is_idempotent(self):
        once = clean(_series([1.0, None, 3.0, None, 7.0]))
        assert clean(once) == once

    def test_clean_columns_leave_out_precipitation(self):
        assert "precipitation" not in CLEAN_COLUMNS
        assert len(CLEAN_COLUMNS) == len(COLUMNS) - 1


class TestSynthetic:
    def test_is_deterministic(self):
        assert generate_synthetic(100, seed=5) == generate_synthetic(100, seed=5)
        assert generate_synthetic(100, seed=5) != generate_synthetic(100, seed=6)

    def test_needs_two_days(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic(47, seed=0)

    def test_noiseless_demand_matches_closed_form(self):
        records = generate_synthetic(200, seed=0, noise=0.0)
        np.testing.assert_allclose(
            [r.hourly_demand for r in records], synthetic_demand(np.arange(200))
        )

    def test_hourly_timestamps_and_complete_rows(self):
        records = generate_synthetic(60, seed=0)
        assert records[1].timestamp - records[0].timestamp == timedelta(hours=1)
        assert all(r.temperature is not None and r.daily_peak >= r.hourly_demand for r in records)

    def test_calendar_fields(self):
        fields = calendar_fields(datetime(2017, 12, 25, 13))
        assert fields["month"] == 12
        assert fields["quarter"] == 4
        assert fields["hour_of_day"] == 13
        assert fields["day_of_week"] == 0
        assert fields["state_holiday"] == 1
        assert fields["day_type"] == 1
