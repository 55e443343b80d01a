"""
Pydantic models for MixSurv.

These models define the data structures for:
- Weibull and Weibull-mixture parameters
- Censoring modes
- Dataset schemas
- Training configuration and network architecture
- Evaluation results and cross-validation reports
- The model-file header
"""
import math
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ALPHA_SUM_TOLERANCE = 1e-9


# ============================================
# ENUMS
# ============================================

class CensoringMode(str, Enum):
    GLOBAL_THRESHOLD = "global_threshold"
    PER_OBSERVATION = "per_observation"


class FunctionId(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    CUBIC = "cubic"


class FeatureKind(str, Enum):
    QUANTITATIVE = "quantitative"
    QUALITATIVE = "qualitative"


class RankingStatistic(str, Enum):
    SURVIVAL = "survival"            # S(t_STH | x), higher = later event
    NEGATIVE_RISK = "negative_risk"  # -(1 - S(t_STH | x))
    MEAN_LIFETIME = "mean_lifetime"  # mixture mean, horizon ignored


# ============================================
# WEIBULL MODELS
# ============================================

class WeibullParams(BaseModel):
    """Two-parameter Weibull: shape beta (dimensionless), scale eta (time units)."""
    model_config = ConfigDict(frozen=True)

    beta: float = Field(..., ge=1.0, allow_inf_nan=False)
    eta: float = Field(..., gt=0.0, allow_inf_nan=False)


class MixtureComponent(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., ge=0.0, le=1.0)
    params: WeibullParams


class MixtureParams(BaseModel):
    """A finite mixture of Weibull distributions with weights summing to one."""
    model_config = ConfigDict(frozen=True)

    components: List[MixtureComponent] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_weights(self):
        total = math.fsum(c.alpha for c in self.components)
        if abs(total - 1.0) > ALPHA_SUM_TOLERANCE:
            raise ValueError(f"Mixture weights must sum to 1, got {total!r}")
        return self

    @classmethod
    def single(cls, beta: float, eta: float) -> "MixtureParams":
        return cls(components=[MixtureComponent(alpha=1.0, params=WeibullParams(beta=beta, eta=eta))])

    @classmethod
    def from_arrays(cls, alpha, beta, eta) -> "MixtureParams":
        """Build a mixture from three equal-length sequences."""
        alpha, beta, eta = (np.asarray(v, dtype=float).ravel() for v in (alpha, beta, eta))
        if not (alpha.shape == beta.shape == eta.shape):
            raise ValueError("alpha, beta and eta must have the same length")
        return cls(components=[
            MixtureComponent(alpha=float(a), params=WeibullParams(beta=float(b), eta=float(e)))
            for a, b, e in zip(alpha, beta, eta)
        ])

    @property
    def p(self) -> int:
        return len(self.components)

    @property
    def alpha(self) -> np.ndarray:
        return np.array([c.alpha for c in self.components], dtype=float)

    @property
    def beta(self) -> np.ndarray:
        return np.array([c.params.beta for c in self.components], dtype=float)

    @property
    def eta(self) -> np.ndarray:
        return np.array([c.params.eta for c in self.components], dtype=float)


# ============================================
# CENSORING
# ============================================

class CensoringSpec(BaseModel):
    """
    How censored rows enter the likelihood.

    GLOBAL_THRESHOLD evaluates every censored row's survival at the single
    threshold t_c; PER_OBSERVATION evaluates it at the row's own observed time.
    """
    model_config = ConfigDict(frozen=True)

    mode: CensoringMode = CensoringMode.GLOBAL_THRESHOLD
    t_c: Optional[float] = Field(None, gt=0.0, allow_inf_nan=False)

    @model_validator(mode="after")
    def check_threshold(self):
        if self.mode == CensoringMode.GLOBAL_THRESHOLD and self.t_c is None:
            raise ValueError("GLOBAL_THRESHOLD censoring requires t_c")
        return self

    @classmethod
    def global_threshold(cls, t_c: float) -> "CensoringSpec":
        return cls(mode=CensoringMode.GLOBAL_THRESHOLD, t_c=float(t_c))

    @classmethod
    def per_observation(cls) -> "CensoringSpec":
        return cls(mode=CensoringMode.PER_OBSERVATION)


# ============================================
# DATASET SCHEMA
# ============================================

class FeatureSpec(BaseModel):
    name: str = Field(..., min_length=1)
    kind: FeatureKind = FeatureKind.QUANTITATIVE


class DatasetSchema(BaseModel):
    """Names the time column, the event column and every covariate column of a CSV."""
    model_config = ConfigDict(extra="forbid")

    time_column: str = Field(..., min_length=1)
    event_column: str = Field(..., min_length=1)
    features: List[FeatureSpec] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_columns(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("Feature names must be unique")
        for reserved in (self.time_column, self.event_column):
            if reserved in names:
                raise ValueError(f"Column '{reserved}' cannot be both a feature and time/event")
        if self.time_column == self.event_column:
            raise ValueError("time_column and event_column must differ")
        return self

    @property
    def feature_names(self) -> List[str]:
        return [f.name for f in self.features]

    @classmethod
    def from_file(cls, path: Path) -> "DatasetSchema":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


# ============================================
# TRAINING CONFIGURATION
# ============================================

class TrainConfig(BaseModel):
    """
    Everything a training run depends on.

    The loss is a sum over observations, so learning_rate applies to
    per-batch sums of the negative log-likelihood. time_scale divides every
    time before it reaches the network (None: median training time).
    """
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    p: int = Field(default=1, ge=1)
    learning_rate: float = Field(default=1e-4, gt=0.0)
    batch_size: int = Field(default=256, ge=2)
    max_epochs: int = Field(default=500, ge=1)
    patience: int = Field(default=20, ge=1)
    offset_epsilon: float = Field(default=1e-4, gt=0.0)
    time_scale: Optional[float] = Field(default=None, gt=0.0)
    censoring_mode: CensoringMode = CensoringMode.GLOBAL_THRESHOLD
    censoring_threshold: Optional[float] = Field(default=None, gt=0.0)
    k_folds: int = Field(default=5, ge=2)
    val_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
    schema_path: Optional[str] = None
    acceptance_gap: float = Field(default=0.05, gt=0.0)
    check_constraints: bool = True

    def censoring_for(self, times: np.ndarray) -> CensoringSpec:
        """Resolve the censoring mode for a training set with the given times."""
        if self.censoring_mode == CensoringMode.PER_OBSERVATION:
            return CensoringSpec.per_observation()
        t_c = self.censoring_threshold
        if t_c is None:
            # end of follow-up when no threshold was configured
            t_c = float(np.max(times))
        return CensoringSpec.global_threshold(t_c)


class Architecture(BaseModel):
    """Layer sizes of the shared trunk and the two heads."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    input_dim: int = Field(..., ge=1)
    n_components: int = Field(default=1, ge=1)
    trunk_sizes: Tuple[int, ...] = (128, 64, 32)
    head_sizes: Tuple[int, ...] = (16, 8)
    bn_momentum: float = Field(default=0.9, gt=0.0, lt=1.0)
    bn_eps: float = Field(default=1e-5, gt=0.0)

    @field_validator("trunk_sizes", "head_sizes")
    @classmethod
    def check_sizes(cls, v):
        if not v or any(size < 1 for size in v):
            raise ValueError("Layer sizes must be a non-empty tuple of positive ints")
        return tuple(v)

    @property
    def has_classifier(self) -> bool:
        return self.n_components > 1


# ============================================
# SYNTHETIC DATA
# ============================================

class GeneratorSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    function_id: FunctionId = FunctionId.LINEAR
    p: Literal[1, 2] = 1
    n: int = Field(default=10000, gt=0)
    censor_fraction: float = Field(default=0.5, ge=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)


# ============================================
# EVALUATION
# ============================================

class EvaluationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    c_index: float = Field(..., ge=0.0, le=1.0)
    n_comparable_pairs: int = Field(..., ge=0)
    n_concordant: int = Field(..., ge=0)

    @model_validator(mode="after")
    def check_ratio(self):
        if self.n_concordant > self.n_comparable_pairs:
            raise ValueError("n_concordant cannot exceed n_comparable_pairs")
        if self.n_comparable_pairs > 0 and self.c_index != self.n_concordant / self.n_comparable_pairs:
            raise ValueError("c_index must equal n_concordant / n_comparable_pairs")
        return self


class FoldReport(BaseModel):
    """Per-fold C-index with the across-fold mean and 95% interval."""
    scores: List[float] = Field(..., min_length=1)
    mean: float
    lower: float = Field(..., ge=0.0, le=1.0)
    upper: float = Field(..., ge=0.0, le=1.0)

    @model_validator(mode="after")
    def check_interval(self):
        if not (self.lower <= self.mean <= self.upper):
            raise ValueError("Interval must contain the mean")
        return self

    @classmethod
    def from_scores(cls, scores: List[float], z: float = 1.96) -> "FoldReport":
        """Normal-approximation interval: mean +/- z * std / sqrt(k), clipped to [0, 1]."""
        values = np.asarray(scores, dtype=float)
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        half = z * std / math.sqrt(values.size)
        return cls(
            scores=[float(v) for v in values],
            mean=mean,
            lower=max(0.0, mean - half),
            upper=min(1.0, mean + half),
        )

    def format_table(self, digits: int = 3) -> str:
        """Render as 'mean (lower - upper)'."""
        return f"{self.mean:.{digits}f} ({self.lower:.{digits}f} - {self.upper:.{digits}f})"


# ============================================
# MODEL FILE
# ============================================

MODEL_FORMAT_VERSION = 1


class ModelFileHeader(BaseModel):
    """JSON header stored next to the parameter tensors of a saved model."""
    format_version: int = MODEL_FORMAT_VERSION
    architecture: Architecture
    offset_epsilon: float = Field(..., gt=0.0)
    time_scale: float = Field(default=1.0, gt=0.0)
    feature_names: List[str] = Field(default_factory=list)
    has_scaler: bool = False
    dataset_schema: Optional[DatasetSchema] = None
    parameter_names: List[str] = Field(default_factory=list)
    running_names: List[str] = Field(default_factory=list)
