"""
The experiment protocols behind the CLI commands.

- cross_validate: k-fold CV, scaler fit per fold, mean-lifetime C-index on each test fold
- sensitivity_sweep: recensor each fold's data at quantiles of its training times
  and score horizon C-indices over a grid
- synth_validate: generate, train, compare held-out NLL at predicted vs true parameters

Every fold gets its own seed spawned from the run seed, so fold i trains
identically whatever else the run does.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import train_test_split

from .dataio import Dataset, Fold, apply_scaler, fit_scaler, make_folds
from .errors import DataError, UndefinedMetricError
from .metrics import censoring_counts, concordance_index, horizon_cindex, predict_mean_lifetime, recensor
from .models import (
    CensoringSpec,
    DatasetSchema,
    FoldReport,
    FunctionId,
    GeneratorSpec,
    RankingStatistic,
    TrainConfig,
)
from .neuralnet import LossTrace, NetworkModel, dataset_nll, train
from .synthgen import generate, real_nll

logger = logging.getLogger(__name__)

NO_RECENSORING_QUANTILE = 1.0
SYNTH_TEST_FRACTION = 0.2


def fold_seeds(seed: int, k: int) -> List[int]:
    """One independent training seed per fold."""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(k)]


# ============================================
# CROSS-VALIDATION
# ============================================

@dataclass
class FoldOutcome:
    index: int
    model: NetworkModel
    trace: LossTrace
    censoring: CensoringSpec
    test: Dataset
    c_index: float = math.nan


@dataclass
class CrossValidationResult:
    report: FoldReport
    folds: List[FoldOutcome] = field(default_factory=list)

    @property
    def best_fold(self) -> FoldOutcome:
        """Highest test C-index; the lowest index wins ties."""
        return max(self.folds, key=lambda f: (f.c_index, -f.index))


def train_fold(
    dataset: Dataset,
    fold: Fold,
    config: TrainConfig,
    seed: int,
    t_c: Optional[float] = None,
    schema: Optional[DatasetSchema] = None,
) -> FoldOutcome:
    """
    Fit the scaler on the fold's training portion and train on it.

    With ``t_c`` both the training portion and the test fold are recensored at
    t_c and the likelihood uses GlobalThreshold(t_c).
    """
    train_part = dataset.subset(fold.train)
    val_part = dataset.subset(fold.validation)
    test_part = dataset.subset(fold.test)
    if t_c is not None:
        train_part, val_part, test_part = (recensor(d, t_c) for d in (train_part, val_part, test_part))
        censoring = CensoringSpec.global_threshold(t_c)
    else:
        censoring = config.censoring_for(dataset.subset(fold.training_portion).times)

    scaler = fit_scaler(dataset.subset(fold.training_portion))
    fold_config = config.model_copy(update={"seed": seed})
    result = train(
        apply_scaler(scaler, train_part),
        fold_config,
        validation=apply_scaler(scaler, val_part),
        censoring=censoring,
        scaler=scaler,
        dataset_schema=schema,
    )
    return FoldOutcome(
        index=fold.index, model=result.model, trace=result.trace,
        censoring=censoring, test=test_part,
    )


def cross_validate(dataset: Dataset, config: TrainConfig,
                   schema: Optional[DatasetSchema] = None) -> CrossValidationResult:
    """
    k-fold CV scored by the mean-lifetime C-index of each test fold.

    Raises:
        UndefinedMetricError: a test fold has no comparable pair
    """
    plan = make_folds(dataset, config.k_folds, config.val_fraction, config.seed)
    seeds = fold_seeds(config.seed, config.k_folds)
    outcomes = []
    for fold in plan.folds:
        outcome = train_fold(dataset, fold, config, seeds[fold.index], schema=schema)
        test = outcome.test
        mu = predict_mean_lifetime(outcome.model, apply_scaler(outcome.model.scaler, test).covariates)
        outcome.c_index = concordance_index(test.times, mu, test.deltas).c_index
        logger.info(
            "Fold %d/%d: C-index %.4f (best epoch %d)",
            fold.index + 1, plan.k, outcome.c_index, outcome.trace.best_epoch,
        )
        outcomes.append(outcome)
    report = FoldReport.from_scores([o.c_index for o in outcomes])
    logger.info("Cross-validated C-index %s", report.format_table())
    return CrossValidationResult(report=report, folds=outcomes)


# ============================================
# CENSORING SENSITIVITY
# ============================================

@dataclass(frozen=True)
class SensitivityRow:
    quantile: float
    t_c: float
    t_sth: float
    c_index: float
    folds_defined: int
    n_uncensored: int
    n_censored: int
    added_censored: int


def sensitivity_sweep(
    dataset: Dataset,
    config: TrainConfig,
    quantiles: Sequence[float],
    horizons: Sequence[float],
    statistic: RankingStatistic = RankingStatistic.SURVIVAL,
    horizon_restricted: bool = False,
) -> List[SensitivityRow]:
    """
    One row per (quantile, horizon), in input order.

    t_c is the quantile of each fold's training-portion times, so the reported
    t_c is the mean across folds. Quantile 1.0 keeps the data as loaded. The
    censoring counts are summed over the folds' training portions.

    Raises:
        DataError: a quantile leaves a fold's training portion without events
    """
    plan = make_folds(dataset, config.k_folds, config.val_fraction, config.seed)
    seeds = fold_seeds(config.seed, config.k_folds)
    rows: List[SensitivityRow] = []

    for quantile in quantiles:
        scores = np.full((plan.k, len(horizons)), np.nan)
        thresholds = []
        n_uncensored = n_censored = base_censored = 0
        for fold in plan.folds:
            portion = dataset.subset(fold.training_portion)
            base_censored += censoring_counts(portion)[1]
            t_c = None
            if quantile < NO_RECENSORING_QUANTILE:
                t_c = float(np.quantile(portion.times, quantile))
                portion = recensor(portion, t_c)
                thresholds.append(t_c)
            else:
                thresholds.append(float(np.max(portion.times)))
            events, censored = censoring_counts(portion)
            if events == 0:
                raise DataError(
                    f"Recensoring at quantile {quantile} leaves fold {fold.index} without events"
                )
            n_uncensored += events
            n_censored += censored

            outcome = train_fold(dataset, fold, config, seeds[fold.index], t_c=t_c)
            for j, t_sth in enumerate(horizons):
                try:
                    scores[fold.index, j] = horizon_cindex(
                        outcome.model, outcome.test, t_sth, statistic, horizon_restricted,
                    ).c_index
                except UndefinedMetricError:
                    logger.warning(
                        "Fold %d: C-index undefined at t_STH=%g (quantile %g)", fold.index, t_sth, quantile,
                    )

        for j, t_sth in enumerate(horizons):
            defined = scores[~np.isnan(scores[:, j]), j]
            if defined.size == 0:
                warnings.warn(f"No fold defines a C-index at t_STH={t_sth} (quantile {quantile})")
            rows.append(SensitivityRow(
                quantile=float(quantile),
                t_c=float(np.mean(thresholds)),
                t_sth=float(t_sth),
                c_index=float(np.mean(defined)) if defined.size else math.nan,
                folds_defined=int(defined.size),
                n_uncensored=n_uncensored,
                n_censored=n_censored,
                added_censored=n_censored - base_censored,
            ))
        logger.info("Quantile %g: mean t_c %.6g, %d censored training rows", quantile, np.mean(thresholds), n_censored)
    return rows


# ============================================
# SYNTHETIC VALIDATION
# ============================================

@dataclass(frozen=True)
class SynthReport:
    function_id: FunctionId
    p: int
    n_test: int
    nll_pred: float
    nll_real: float

    @property
    def relative_gap(self) -> float:
        return abs(self.nll_pred - self.nll_real) / abs(self.nll_real)

    def passed(self, acceptance_gap: float) -> bool:
        return self.relative_gap <= acceptance_gap


def split_indices(n: int, test_fraction: float, val_fraction: float, seed: int) -> Tuple[np.ndarray, ...]:
    """Sorted (train, validation, test) row indices."""
    rest, test = train_test_split(np.arange(n), test_size=test_fraction, random_state=seed, shuffle=True)
    fit, val = train_test_split(rest, test_size=val_fraction, random_state=seed + 1, shuffle=True)
    return np.sort(fit), np.sort(val), np.sort(test)


def synth_validate(function_id: FunctionId, p: int, config: TrainConfig, n: int = 10000) -> SynthReport:
    """
    Generate a synthetic sample, train on it and compare held-out NLL at the
    predicted parameters with the NLL at the true parameters.
    """
    spec = GeneratorSpec(function_id=function_id, p=p, n=n, seed=config.seed)
    dataset, truth = generate(spec)
    fit_idx, val_idx, test_idx = split_indices(n, SYNTH_TEST_FRACTION, config.val_fraction, config.seed)

    scaler = fit_scaler(dataset.subset(np.sort(np.concatenate([fit_idx, val_idx]))))
    result = train(
        apply_scaler(scaler, dataset.subset(fit_idx)),
        config.model_copy(update={"p": p}),
        validation=apply_scaler(scaler, dataset.subset(val_idx)),
        censoring=truth.censoring,
        scaler=scaler,
    )
    test = dataset.subset(test_idx)
    report = SynthReport(
        function_id=FunctionId(function_id),
        p=p,
        n_test=len(test),
        nll_pred=dataset_nll(result.model, apply_scaler(scaler, test), truth.censoring),
        nll_real=real_nll(test, truth.subset(test_idx)),
    )
    logger.info(
        "%s p=%d: -LL_pred %.4f, -LL_real %.4f, gap %.4f",
        report.function_id.value, p, report.nll_pred, report.nll_real, report.relative_gap,
    )
    return report
