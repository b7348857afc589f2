"Exception hierarchy. Each class carries the CLI exit code it maps to."

from typing import Optional

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class LoadTuneError(Exception):
    exit_code: int = EXIT_USAGE


class UsageError(LoadTuneError):
    exit_code = EXIT_USAGE


class ConfigurationError(UsageError):
    pass


class RangeError(UsageError, IndexError):
    pass


class DataError(LoadTuneError):
    exit_code = EXIT_DATA


class DivisionGuardError(DataError):
    pass


class IngestError(DataError):
    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{', '.join(location)}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class DataQualityError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class NumericError(LoadTuneError):
    exit_code = EXIT_NUMERIC

    def __init__(self, message: str, layer: Optional[str] = None):
        if layer:
            message = f"{layer}: {message}"
        super().__init__(message)
        self.layer = layer


class DimensionError(NumericError, ValueError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class OptimizationError(NumericError):
    pass
