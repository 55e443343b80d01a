"""
Dataset ingestion, feature standardization, splits and cross-validation bookkeeping.

CSV is the only ingestion format. The schema (time column, event column and
the kind of every covariate) always comes from a DatasetSchema; nothing is
inferred. Qualitative covariates are one-hot expanded at load time into
columns named ``<column>=<category>``. Missing values are rejected, never imputed.
Times are kept in their own units; only covariates are standardized.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold, train_test_split
from sklearn.preprocessing import StandardScaler

from .errors import (
    ConfigError,
    DataError,
    DatasetTooSmallError,
    EmptyDatasetError,
    InvalidRowsError,
    MissingColumnsError,
    SchemaMismatchError,
    UnparsableCellError,
)
from .models import DatasetSchema, FeatureKind, FeatureSpec

logger = logging.getLogger(__name__)

ONE_HOT_SEPARATOR = "="
DEFAULT_TIME_COLUMN = "time"
DEFAULT_EVENT_COLUMN = "event"


# ============================================
# DATASET
# ============================================

@dataclass(frozen=True)
class SurvivalRecord:
    """One observation (x_i, t_i, delta_i)."""
    covariates: np.ndarray
    time: float
    event: int


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Column-oriented, immutable collection of survival records.

    covariates is n x d, times and deltas have length n. qualitative_mask flags
    the one-hot indicator columns.
    """
    covariates: np.ndarray
    times: np.ndarray
    deltas: np.ndarray
    feature_names: Tuple[str, ...]
    qualitative_mask: Tuple[bool, ...] = ()

    def __post_init__(self):
        covariates = np.asarray(self.covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(-1, 1)
        times = np.asarray(self.times, dtype=float).ravel()
        deltas = np.asarray(self.deltas).ravel()
        names = tuple(self.feature_names)
        mask = tuple(bool(m) for m in self.qualitative_mask) or (False,) * len(names)

        n = times.shape[0]
        if covariates.shape != (n, len(names)) or deltas.shape != (n,) or len(mask) != len(names):
            raise DataError(
                f"Inconsistent dataset shapes: covariates {covariates.shape}, "
                f"times {times.shape}, deltas {deltas.shape}, {len(names)} feature names"
            )
        if not np.all(np.isfinite(times)) or np.any(times <= 0.0):
            raise DataError("All times must be finite and > 0")
        if not np.all((deltas == 0) | (deltas == 1)):
            raise DataError("Event indicators must be 0 or 1")
        if not np.all(np.isfinite(covariates)):
            raise DataError("Covariates must be finite")

        object.__setattr__(self, "covariates", _readonly(covariates))
        object.__setattr__(self, "times", _readonly(times))
        object.__setattr__(self, "deltas", _readonly(deltas.astype(np.int8)))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "qualitative_mask", mask)

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def d(self) -> int:
        return len(self.feature_names)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(
            self.covariates[indices], self.times[indices], self.deltas[indices],
            self.feature_names, self.qualitative_mask,
        )

    def with_deltas(self, deltas) -> "Dataset":
        return Dataset(self.covariates, self.times, deltas, self.feature_names, self.qualitative_mask)

    def with_covariates(self, covariates, feature_names: Optional[Sequence[str]] = None,
                        qualitative_mask: Optional[Sequence[bool]] = None) -> "Dataset":
        return Dataset(
            covariates, self.times, self.deltas,
            tuple(feature_names) if feature_names is not None else self.feature_names,
            tuple(qualitative_mask) if qualitative_mask is not None else self.qualitative_mask,
        )

    def records(self) -> Iterator[SurvivalRecord]:
        for i in range(len(self)):
            yield SurvivalRecord(self.covariates[i].copy(), float(self.times[i]), int(self.deltas[i]))

    @classmethod
    def from_records(cls, records: Sequence[SurvivalRecord], feature_names: Sequence[str]) -> "Dataset":
        if not records:
            raise EmptyDatasetError("No records")
        return cls(
            np.vstack([r.covariates for r in records]),
            np.array([r.time for r in records]),
            np.array([r.event for r in records]),
            tuple(feature_names),
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.feature_names == other.feature_names
            and self.qualitative_mask == other.qualitative_mask
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.deltas, other.deltas)
        )


# ============================================
# CSV INGESTION
# ============================================

def _line_numbers(frame: pd.DataFrame, mask) -> List[int]:
    # header is line 1
    return [int(i) + 2 for i in frame.index[np.asarray(mask)]]


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return math.nan


def _parse_numeric(frame: pd.DataFrame, column: str) -> Tuple[np.ndarray, np.ndarray]:
    """Return (values, missing) for a numeric column; raises on unparsable cells."""
    text = frame[column].str.strip()
    missing = (text == "").to_numpy()
    # python float() rounds correctly, so exported files load back bit for bit
    values = text.map(_to_float).to_numpy(dtype=float)
    unparsable = ~missing & ~np.isfinite(values)
    if unparsable.any():
        raise UnparsableCellError(column, _line_numbers(frame, unparsable))
    return values, missing


def load_csv(path, schema: DatasetSchema) -> Dataset:
    """
    Load a comma-delimited UTF-8 CSV with a header row.

    Raises:
        EmptyDatasetError: no header or no data rows
        MissingColumnsError: a schema column is absent from the header
        UnparsableCellError: a numeric cell cannot be parsed
        InvalidRowsError: non-positive times, bad or missing events, missing covariates
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Data file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"{path} is empty")
    if frame.empty:
        raise EmptyDatasetError(f"{path} has a header but no data rows")

    required = [schema.time_column, schema.event_column, *schema.feature_names]
    missing_columns = [c for c in required if c not in frame.columns]
    if missing_columns:
        raise MissingColumnsError(missing_columns)

    times, time_missing = _parse_numeric(frame, schema.time_column)
    events, event_missing = _parse_numeric(frame, schema.event_column)

    if event_missing.any():
        raise InvalidRowsError("Missing event indicator", _line_numbers(frame, event_missing))
    bad_event = ~np.isin(events, (0.0, 1.0))
    if bad_event.any():
        raise InvalidRowsError("Event indicator must be exactly 0 or 1", _line_numbers(frame, bad_event))
    if time_missing.any():
        raise InvalidRowsError("Missing time", _line_numbers(frame, time_missing))
    non_positive = times <= 0.0
    if non_positive.any():
        raise InvalidRowsError("Non-positive time", _line_numbers(frame, non_positive))

    columns: List[np.ndarray] = []
    names: List[str] = []
    mask: List[bool] = []
    for feature in schema.features:
        if feature.kind == FeatureKind.QUANTITATIVE:
            values, missing = _parse_numeric(frame, feature.name)
            if missing.any():
                raise InvalidRowsError(f"Missing value in '{feature.name}'", _line_numbers(frame, missing))
            columns.append(values)
            names.append(feature.name)
            mask.append(False)
        else:
            text = frame[feature.name].str.strip()
            missing = (text == "").to_numpy()
            if missing.any():
                raise InvalidRowsError(f"Missing value in '{feature.name}'", _line_numbers(frame, missing))
            for category in sorted(text.unique()):
                columns.append((text == category).to_numpy(dtype=float))
                names.append(f"{feature.name}{ONE_HOT_SEPARATOR}{category}")
                mask.append(True)

    covariates = np.column_stack(columns) if columns else np.empty((len(frame), 0))
    dataset = Dataset(covariates, times, events.astype(np.int8), tuple(names), tuple(mask))
    logger.info(
        "Loaded %d records (%d events) with %d covariates from %s",
        len(dataset), int(dataset.deltas.sum()), dataset.d, path,
    )
    return dataset


def _qualitative_groups(dataset: Dataset) -> dict:
    """Map each qualitative source column to [(category, column index), ...]."""
    groups: dict = {}
    for index, (name, is_qualitative) in enumerate(zip(dataset.feature_names, dataset.qualitative_mask)):
        if is_qualitative:
            base, category = name.split(ONE_HOT_SEPARATOR, 1)
            groups.setdefault(base, []).append((category, index))
    return groups


def schema_for(dataset: Dataset, time_column: str = DEFAULT_TIME_COLUMN,
               event_column: str = DEFAULT_EVENT_COLUMN) -> DatasetSchema:
    """The schema under which save_csv(dataset) loads back to the same Dataset."""
    features: List[FeatureSpec] = []
    seen = set()
    for name, is_qualitative in zip(dataset.feature_names, dataset.qualitative_mask):
        if is_qualitative:
            base = name.split(ONE_HOT_SEPARATOR, 1)[0]
            if base not in seen:
                seen.add(base)
                features.append(FeatureSpec(name=base, kind=FeatureKind.QUALITATIVE))
        else:
            features.append(FeatureSpec(name=name, kind=FeatureKind.QUANTITATIVE))
    return DatasetSchema(time_column=time_column, event_column=event_column, features=features)


def save_csv(dataset: Dataset, path, time_column: str = DEFAULT_TIME_COLUMN,
             event_column: str = DEFAULT_EVENT_COLUMN) -> DatasetSchema:
    """
    Write a Dataset as CSV, folding one-hot columns back into their source column.

    Returns:
        The DatasetSchema to load the file with
    """
    schema = schema_for(dataset, time_column, event_column)
    groups = _qualitative_groups(dataset)
    data = {}
    for feature in schema.features:
        if feature.kind == FeatureKind.QUALITATIVE:
            categories = np.array([c for c, _ in groups[feature.name]], dtype=object)
            indicators = dataset.covariates[:, [i for _, i in groups[feature.name]]]
            data[feature.name] = categories[np.argmax(indicators, axis=1)]
        else:
            data[feature.name] = dataset.covariates[:, dataset.feature_names.index(feature.name)]
    data[time_column] = dataset.times
    data[event_column] = dataset.deltas.astype(int)
    pd.DataFrame(data).to_csv(Path(path), index=False, encoding="utf-8", float_format="%.17g")
    return schema


def align_features(dataset: Dataset, feature_names: Sequence[str]) -> Dataset:
    """
    Reorder covariates to a model's feature list.

    One-hot indicators absent from ``dataset`` are filled with zeros when their
    source column is present (the category just did not occur); any other
    missing or unexpected column is a SchemaMismatchError.
    """
    feature_names = list(feature_names)
    if list(dataset.feature_names) == feature_names:
        return dataset
    present = {name: i for i, name in enumerate(dataset.feature_names)}
    present_bases = set(_qualitative_groups(dataset))
    known = set(feature_names)
    unexpected = [name for name in dataset.feature_names if name not in known]
    if unexpected:
        raise SchemaMismatchError(f"Columns unknown to the model: {', '.join(unexpected)}")

    columns = []
    mask = []
    for name in feature_names:
        if name in present:
            columns.append(dataset.covariates[:, present[name]])
            mask.append(dataset.qualitative_mask[present[name]])
            continue
        base = name.split(ONE_HOT_SEPARATOR, 1)[0]
        if ONE_HOT_SEPARATOR in name and base in present_bases:
            columns.append(np.zeros(len(dataset)))
            mask.append(True)
            continue
        raise SchemaMismatchError(f"Model feature '{name}' is missing from the data")
    return dataset.with_covariates(np.column_stack(columns), feature_names, mask)


# ============================================
# STANDARDIZATION
# ============================================

@dataclass(frozen=True, eq=False)
class ScalerStats:
    """Per-feature mean and standard deviation; zero-std features use divisor 1."""
    mean: np.ndarray
    scale: np.ndarray
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "scale", _readonly(np.asarray(self.scale, dtype=float)))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def transform(self, covariates: np.ndarray) -> np.ndarray:
        covariates = np.asarray(covariates, dtype=float)
        if covariates.shape[1] != self.mean.shape[0]:
            raise SchemaMismatchError(
                f"Scaler expects {self.mean.shape[0]} features, got {covariates.shape[1]}"
            )
        return (covariates - self.mean) / self.scale


def fit_scaler(train: Dataset) -> ScalerStats:
    """Fit standardization statistics on a training portion only."""
    if len(train) == 0:
        raise EmptyDatasetError("Cannot fit a scaler on an empty dataset")
    # StandardScaler: population std, scale_ = 1 where std == 0
    scaler = StandardScaler().fit(train.covariates)
    return ScalerStats(mean=scaler.mean_, scale=scaler.scale_, feature_names=train.feature_names)


def apply_scaler(stats: ScalerStats, dataset: Dataset) -> Dataset:
    return dataset.with_covariates(stats.transform(dataset.covariates))


# ============================================
# CROSS-VALIDATION
# ============================================

@dataclass(frozen=True)
class Fold:
    index: int
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    @property
    def training_portion(self) -> np.ndarray:
        """train + validation, i.e. everything outside the test fold."""
        return np.sort(np.concatenate([self.train, self.validation]))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    val_fraction: float
    seed: int
    folds: List[Fold] = field(default_factory=list)
    assignment: Optional[np.ndarray] = None


def make_folds(dataset: Dataset, k: int = 5, val_fraction: float = 0.2, seed: int = 0) -> FoldPlan:
    """
    k shuffled test folds; inside each training portion ``val_fraction`` is held
    out for early stopping.

    Raises:
        ConfigError: k < 2 or val_fraction outside (0, 1)
        DatasetTooSmallError: fewer records than folds, or a training portion under 2 rows
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(dataset)
    if n < k:
        raise DatasetTooSmallError(f"{n} records cannot form {k} folds")

    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    assignment = np.empty(n, dtype=int)
    folds = []
    for index, (train_idx, test_idx) in enumerate(splitter.split(np.zeros((n, 1)))):
        if train_idx.size < 2:
            raise DatasetTooSmallError(f"Fold {index} leaves {train_idx.size} training rows")
        fit_idx, val_idx = train_test_split(
            train_idx, test_size=val_fraction, random_state=seed + index, shuffle=True,
        )
        assignment[test_idx] = index
        folds.append(Fold(index=index, train=np.sort(fit_idx), validation=np.sort(val_idx), test=np.sort(test_idx)))
    return FoldPlan(k=k, val_fraction=val_fraction, seed=seed, folds=folds, assignment=assignment)
