from contextlib import contextmanager
from datetime import date, datetime, time
import json
import os
import os.path
import tempfile
from typing import Any, Iterator, Optional, Union

from dateutil.parser import parse as parse_datetime


def parse_date(source: Union[str, date, None]) -> Optional[date]:
    if source is None or source == "":
        return None
    if isinstance(source, datetime):
        return source.date()
    if isinstance(source, date):
        return source
    return parse_datetime(source).date()


def end_of_day(value: date) -> datetime:
    return datetime.combine(value, time.max.replace(microsecond=0))


def parse_optional_float(source: str) -> Optional[float]:
    source = source.strip()
    if not source:
        return None
    return float(source)


def format_float(value: Optional[float]) -> str:
    if value is None:
        return ""
    return repr(float(value))


@contextmanager
def atomic_write(path: str, mode: str = "w", **kwargs) -> Iterator[Any]:
    """Open a temporary file next to `path` and move it into place once the
    block finishes without raising. Interrupted writes leave `path` as it was.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(
        dir=directory, prefix=f".{os.path.basename(path)}.", suffix=".tmp"
    )
    try:
        with os.fdopen(fd, mode, **kwargs) as f:
            yield f
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def read_json(path: str) -> dict:
    with open(path) as f:
        return json.load(f)


def write_json(path: str, obj: Any, indent: Optional[int] = 2):
    with atomic_write(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=indent, ensure_ascii=False, allow_nan=False)
        f.write("\n")
