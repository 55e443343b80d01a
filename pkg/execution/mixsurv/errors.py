"""
Exception hierarchy for MixSurv.

Every error raised on purpose by the library derives from MixSurvError so the
CLI can map it to an exit status.
"""
from typing import Optional, Sequence


class MixSurvError(Exception):
    """Base class for all MixSurv errors."""
    pass


class ConfigError(MixSurvError):
    """Raised when a configuration value or file is invalid."""
    pass


# ============================================
# DATA ERRORS
# ============================================

class DataError(MixSurvError):
    """Base class for dataset and schema problems."""
    pass


class EmptyDatasetError(DataError):
    pass


class MissingColumnsError(DataError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__(f"Missing columns: {', '.join(self.missing)}")


class UnparsableCellError(DataError):
    def __init__(self, column: str, rows: Sequence[int]):
        self.column = column
        self.rows = list(rows)
        super().__init__(
            f"Column '{column}' has unparsable cells on rows {_format_rows(self.rows)}"
        )


class InvalidRowsError(DataError):
    """Rows rejected because of non-positive times, bad events or missing values."""

    def __init__(self, reason: str, rows: Sequence[int]):
        self.reason = reason
        self.rows = list(rows)
        super().__init__(f"{reason} on rows {_format_rows(self.rows)}")


class SchemaMismatchError(DataError):
    pass


class DatasetTooSmallError(DataError):
    pass


# ============================================
# NUMERICAL ERRORS
# ============================================

class DomainError(MixSurvError, ValueError):
    """An argument lies outside the domain of a closed-form expression."""
    pass


class ShapeMismatchError(MixSurvError, ValueError):
    pass


class UndefinedMetricError(MixSurvError):
    """The concordance index has no comparable pairs."""
    pass


class BatchTooSmallError(MixSurvError):
    pass


class ConstraintViolationError(MixSurvError):
    pass


class StaleCacheError(MixSurvError):
    """A forward cache was used after the model it came from changed."""
    pass


class TrainingDivergedError(MixSurvError):
    def __init__(self, message: str, layer: Optional[str] = None, epoch: Optional[int] = None):
        self.layer = layer
        self.epoch = epoch
        details = []
        if layer is not None:
            details.append(f"layer={layer}")
        if epoch is not None:
            details.append(f"epoch={epoch}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")


class ModelFileError(MixSurvError):
    pass


class UnscaledInputWarning(UserWarning):
    """Covariates passed to a model look like they were not standardized."""
    pass


def _format_rows(rows: Sequence[int], limit: int = 20) -> str:
    shown = ", ".join(str(r) for r in rows[:limit])
    if len(rows) > limit:
        shown += f", ... ({len(rows)} rows)"
    return shown
