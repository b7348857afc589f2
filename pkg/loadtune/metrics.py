from typing import Sequence, Tuple, TypedDict, Union

import numpy as np
from sklearn.metrics import mean_absolute_percentage_error, mean_squared_error

from .errors import DivisionGuardError, UsageError
from .types import EvalResult

MAPE_GUARD = 1e-9

Series = Union[Sequence[float], np.ndarray]


class EvalSummary(TypedDict):
    mse: float
    mape: float
    count: int


def _pair(actual: Series, predicted: Series) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.size == 0:
        raise UsageError("metrics need at least one sample")
    if a.shape != p.shape:
        raise UsageError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    return a, p


def mse(actual: Series, predicted: Series) -> float:
    a, p = _pair(actual, predicted)
    return float(mean_squared_error(a, p))


def mape(actual: Series, predicted: Series, guard: float = MAPE_GUARD) -> float:
    """Mean absolute percentage error in percent. Any actual value within
    ``guard`` of zero is treated as corrupt data and raises.
    """
    a, p = _pair(actual, predicted)
    if np.any(np.abs(a) <= guard):
        raise DivisionGuardError(
            f"{int(np.sum(np.abs(a) <= guard))} actual value(s) within {guard} of zero"
        )
    return float(100.0 * mean_absolute_percentage_error(a, p))


def evaluate(actual: Series, predicted: Series) -> EvalResult:
    a, p = _pair(actual, predicted)
    return EvalResult(mse=mse(a, p), mape=mape(a, p), count=a.size)


def summarize(result: EvalResult) -> EvalSummary:
    return {
        "mse": result.mse,
        "mape": round(result.mape, 2),
        "count": result.count,
    }
