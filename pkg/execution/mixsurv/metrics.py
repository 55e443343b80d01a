"""
Evaluation: concordance index, mean-lifetime and horizon scoring, recensoring.

Concordance reads the indicators literally:

    C = sum_ij 1[t_i > t_j] 1[s_i > s_j] delta_j / sum_ij 1[t_i > t_j] delta_j

with s the predicted score (higher = later event). Ties in s are never
concordant.
"""
import logging
import warnings
from typing import Optional, Tuple

import numpy as np

from .dataio import Dataset, ScalerStats, align_features, apply_scaler
from .errors import DomainError, ShapeMismatchError, UndefinedMetricError, UnscaledInputWarning
from .models import EvaluationResult, RankingStatistic
from .neuralnet import NetworkModel, predict_params
from .weibull import mixture_log_survival_array, mixture_mean_lifetime_array

logger = logging.getLogger(__name__)

PAIR_CHUNK_ROWS = 512
# standardized columns rarely have |mean| this large on a batch of any size
UNSCALED_MEAN_THRESHOLD = 5.0


# ============================================
# CONCORDANCE
# ============================================

def _count_pairs(times: np.ndarray, scores: np.ndarray, eligible: np.ndarray) -> Tuple[int, int]:
    comparable = 0
    concordant = 0
    for start in range(0, times.size, PAIR_CHUNK_ROWS):
        rows = slice(start, start + PAIR_CHUNK_ROWS)
        pairs = (times[rows, None] > times[None, :]) & eligible[None, :]
        comparable += int(np.count_nonzero(pairs))
        concordant += int(np.count_nonzero(pairs & (scores[rows, None] > scores[None, :])))
    return comparable, concordant


def _evaluate(times, scores, deltas, horizon: Optional[float] = None) -> EvaluationResult:
    times = np.asarray(times, dtype=float)
    scores = np.asarray(scores, dtype=float)
    deltas = np.asarray(deltas)
    if not (times.shape == scores.shape == deltas.shape) or times.ndim != 1:
        raise ShapeMismatchError(
            f"times, predictions and deltas must be equal-length vectors, got "
            f"{times.shape}, {scores.shape}, {deltas.shape}"
        )
    eligible = deltas == 1
    if horizon is not None:
        eligible &= times <= horizon
    comparable, concordant = _count_pairs(times, scores, eligible)
    if comparable == 0:
        raise UndefinedMetricError("No comparable pairs: C-index is undefined")
    return EvaluationResult(
        c_index=concordant / comparable,
        n_comparable_pairs=comparable,
        n_concordant=concordant,
    )


def concordance_index(times, predictions, deltas) -> EvaluationResult:
    """
    Exact C-index over all ordered pairs.

    Raises:
        ShapeMismatchError: lengths differ
        UndefinedMetricError: no comparable pair (fewer than 2 rows, or no event
            strictly earlier than another time)
    """
    return _evaluate(times, predictions, deltas)


# ============================================
# MODEL SCORING
# ============================================

def _looks_unscaled(scaler: ScalerStats, x: np.ndarray) -> bool:
    """
    True when the batch statistics sit closer to the scaler's training statistics
    than to mean 0, std 1.

    Both distances are measured in standardized units and summed over the
    columns that vary in the batch.
    """
    if x.ndim != 2 or x.shape[1] != scaler.mean.size:
        return False
    column_mean = np.mean(x, axis=0)
    column_std = np.std(x, axis=0)
    if np.any(np.abs(column_mean) > UNSCALED_MEAN_THRESHOLD):
        return True
    varying = column_std > 0.0
    if not np.any(varying):
        return False
    m, s = column_mean[varying], column_std[varying]
    mu, sigma = scaler.mean[varying], scaler.scale[varying]
    as_scaled = np.abs(m) + np.abs(np.log(s))
    as_raw = np.abs((m - mu) / sigma) + np.abs(np.log(s / sigma))
    return float(np.sum(as_raw)) < float(np.sum(as_scaled))


def _warn_if_unscaled(model: NetworkModel, x: np.ndarray) -> None:
    if model.scaler is None or x.shape[0] < 2:
        return
    if _looks_unscaled(model.scaler, x):
        warnings.warn(
            "Covariates look unstandardized (closer to the training statistics than to mean 0, std 1); "
            "apply the model's stored scaler first",
            UnscaledInputWarning,
            stacklevel=3,
        )


def predict_mean_lifetime(model: NetworkModel, x) -> np.ndarray:
    """Mixture mean lifetime per row, in data time units; x must be standardized."""
    x = np.asarray(x, dtype=float)
    _warn_if_unscaled(model, x)
    params = predict_params(model, x)
    return mixture_mean_lifetime_array(params.alpha, params.beta, params.eta)


def _horizon_log_survival(model: NetworkModel, x: np.ndarray, t_sth: float) -> np.ndarray:
    if not np.isfinite(t_sth) or t_sth <= 0.0:
        raise DomainError(f"Horizon must be finite and > 0, got {t_sth!r}")
    params = predict_params(model, x)
    return mixture_log_survival_array(np.full(params.n, float(t_sth)), params.alpha, params.beta, params.eta)


def survival_at_horizon(model: NetworkModel, x, t_sth: float) -> np.ndarray:
    """P(T >= t_sth | x) per row; x must be standardized."""
    x = np.asarray(x, dtype=float)
    _warn_if_unscaled(model, x)
    return np.exp(_horizon_log_survival(model, x, t_sth))


def prepare_covariates(model: NetworkModel, dataset: Dataset) -> np.ndarray:
    """Align a raw dataset to the model's features and apply its scaler."""
    if model.feature_names:
        dataset = align_features(dataset, model.feature_names)
    if model.scaler is not None:
        dataset = apply_scaler(model.scaler, dataset)
    return dataset.covariates


def horizon_cindex(
    model: NetworkModel,
    dataset: Dataset,
    t_sth: float,
    statistic: RankingStatistic = RankingStatistic.SURVIVAL,
    horizon_restricted: bool = False,
) -> EvaluationResult:
    """
    C-index of a raw (unstandardized) dataset ranked by a horizon statistic.

    With ``horizon_restricted`` only pairs whose earlier time is an event at or
    before t_sth are comparable.
    """
    x = prepare_covariates(model, dataset)
    statistic = RankingStatistic(statistic)
    if statistic == RankingStatistic.MEAN_LIFETIME:
        if not np.isfinite(t_sth) or t_sth <= 0.0:
            raise DomainError(f"Horizon must be finite and > 0, got {t_sth!r}")
        params = predict_params(model, x)
        scores = mixture_mean_lifetime_array(params.alpha, params.beta, params.eta)
    else:
        log_s = _horizon_log_survival(model, x, t_sth)
        # -(1 - S) = expm1(log S)
        scores = np.exp(log_s) if statistic == RankingStatistic.SURVIVAL else np.expm1(log_s)
    return _evaluate(
        dataset.times, scores, dataset.deltas,
        horizon=float(t_sth) if horizon_restricted else None,
    )


# ============================================
# RECENSORING
# ============================================

def recensor(dataset: Dataset, t_c: float) -> Dataset:
    """delta_i = 1 if t_i < t_c else 0; times unchanged."""
    if not np.isfinite(t_c) or t_c <= 0.0:
        raise DomainError(f"Censoring threshold must be finite and > 0, got {t_c!r}")
    return dataset.with_deltas((dataset.times < t_c).astype(np.int8))


def censoring_counts(dataset: Dataset) -> Tuple[int, int]:
    """(n_uncensored, n_censored)."""
    n_events = int(np.count_nonzero(dataset.deltas))
    return n_events, len(dataset) - n_events
