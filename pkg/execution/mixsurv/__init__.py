"""
MixSurv - Weibull-mixture survival regression

This package learns, for every covariate vector, a finite mixture of Weibull
distributions from right-censored data. It includes:

- Closed-form Weibull and mixture math in the log domain
- The censored mixture negative log-likelihood with analytic gradients
- A numpy network (shared trunk, regression head, classification head) trained with Adam
- Concordance-index evaluation, horizon survival and recensoring
- Synthetic ground-truth generators
- CSV ingestion, standardization and k-fold bookkeeping
"""

# Only import models and errors at package level to keep imports light
# Functions from weibull, mixloss, neuralnet, metrics should be imported directly where needed

from .errors import (
    MixSurvError,
    ConfigError,
    DataError,
    DomainError,
    ShapeMismatchError,
    UndefinedMetricError,
    TrainingDivergedError,
    UnscaledInputWarning,
)
from .models import (
    # Enums
    CensoringMode,
    FunctionId,
    FeatureKind,
    RankingStatistic,
    # Weibull models
    WeibullParams,
    MixtureComponent,
    MixtureParams,
    # Censoring and data
    CensoringSpec,
    FeatureSpec,
    DatasetSchema,
    # Training
    TrainConfig,
    Architecture,
    GeneratorSpec,
    # Evaluation
    EvaluationResult,
    FoldReport,
)

__all__ = [
    # Errors
    "MixSurvError",
    "ConfigError",
    "DataError",
    "DomainError",
    "ShapeMismatchError",
    "UndefinedMetricError",
    "TrainingDivergedError",
    "UnscaledInputWarning",
    # Enums
    "CensoringMode",
    "FunctionId",
    "FeatureKind",
    "RankingStatistic",
    # Weibull models
    "WeibullParams",
    "MixtureComponent",
    "MixtureParams",
    # Censoring and data
    "CensoringSpec",
    "FeatureSpec",
    "DatasetSchema",
    # Training
    "TrainConfig",
    "Architecture",
    "GeneratorSpec",
    # Evaluation
    "EvaluationResult",
    "FoldReport",
]
