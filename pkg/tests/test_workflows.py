import numpy as np
import pytest

from mixsurv.dataio import make_folds
from mixsurv.errors import DataError
from mixsurv.metrics import horizon_cindex
from mixsurv.models import FunctionId, GeneratorSpec, TrainConfig
from mixsurv.synthgen import generate
from mixsurv.workflows import (
    CrossValidationResult,
    FoldOutcome,
    cross_validate,
    fold_seeds,
    sensitivity_sweep,
    split_indices,
    synth_validate,
    train_fold,
)


def test_fold_seeds_are_distinct_and_reproducible():
    seeds = fold_seeds(7, 5)
    assert len(set(seeds)) == 5
    assert seeds == fold_seeds(7, 5)
    assert seeds[:3] == fold_seeds(7, 3)


def test_split_indices_partition_rows():
    fit, val, test = split_indices(100, 0.2, 0.25, seed=3)
    assert (fit.size, val.size, test.size) == (60, 20, 20)
    assert np.array_equal(np.sort(np.concatenate([fit, val, test])), np.arange(100))


# ============================================
# CROSS-VALIDATION
# ============================================

def test_cross_validation_reports_every_fold(linear_sample, quick_config):
    dataset, _ = linear_sample
    result = cross_validate(dataset, quick_config)
    assert len(result.folds) == quick_config.k_folds
    assert len(result.report.scores) == quick_config.k_folds
    assert result.report.lower <= result.report.mean <= result.report.upper
    for outcome in result.folds:
        assert 0.0 <= outcome.c_index <= 1.0
        assert outcome.model.scaler is not None
        assert outcome.model.feature_names == ["x"]


def test_cross_validation_is_deterministic(linear_sample, quick_config):
    dataset, _ = linear_sample
    first = cross_validate(dataset, quick_config)
    second = cross_validate(dataset, quick_config)
    assert first.report == second.report
    for a, b in zip(first.folds, second.folds):
        assert a.trace.train_nll == b.trace.train_nll


def test_best_fold_prefers_lowest_index_on_ties():
    folds = [FoldOutcome(index=i, model=None, trace=None, censoring=None, test=None, c_index=c)
             for i, c in enumerate([0.6, 0.8, 0.8])]
    result = CrossValidationResult(report=None, folds=folds)
    assert result.best_fold.index == 1


def test_recensored_fold_uses_its_threshold(linear_sample, quick_config):
    dataset, _ = linear_sample
    fold = make_folds(dataset, 3, 0.2, seed=0).folds[0]
    t_c = float(np.median(dataset.times))
    outcome = train_fold(dataset, fold, quick_config, seed=1, t_c=t_c)
    assert outcome.censoring.t_c == t_c
    assert np.array_equal(outcome.test.deltas, (outcome.test.times < t_c).astype(int))


# ============================================
# CENSORING SENSITIVITY
# ============================================

def test_sweep_emits_one_row_per_quantile_and_horizon(linear_sample, quick_config):
    dataset, _ = linear_sample
    horizons = list(np.quantile(dataset.times, [0.25, 0.5, 0.75]))
    rows = sensitivity_sweep(dataset, quick_config, [0.5, 0.35], horizons)
    assert len(rows) == 6
    assert [row.quantile for row in rows] == [0.5, 0.5, 0.5, 0.35, 0.35, 0.35]
    assert rows[0].n_censored < rows[3].n_censored
    assert rows[3].added_censored > 0


def test_unit_quantile_reproduces_the_unmodified_protocol(linear_sample, quick_config):
    dataset, _ = linear_sample
    horizon = float(np.median(dataset.times))
    [row] = sensitivity_sweep(dataset, quick_config, [1.0], [horizon])

    plan = make_folds(dataset, quick_config.k_folds, quick_config.val_fraction, quick_config.seed)
    seeds = fold_seeds(quick_config.seed, quick_config.k_folds)
    scores = []
    for fold in plan.folds:
        outcome = train_fold(dataset, fold, quick_config, seeds[fold.index])
        scores.append(horizon_cindex(outcome.model, outcome.test, horizon).c_index)
    assert row.c_index == np.mean(scores)
    assert row.added_censored == 0
    assert row.folds_defined == quick_config.k_folds


def test_quantile_without_events_is_a_data_error(linear_sample, quick_config):
    dataset, _ = linear_sample
    with pytest.raises(DataError):
        sensitivity_sweep(dataset, quick_config, [0.0], [1.0])


# ============================================
# SYNTHETIC VALIDATION
# ============================================

def test_synthetic_validation_report(quick_config):
    report = synth_validate(FunctionId.LINEAR, 1, quick_config, n=300)
    assert report.n_test == 60
    assert np.isfinite(report.nll_pred)
    assert np.isfinite(report.nll_real)
    assert report.relative_gap >= 0.0
    assert report.passed(report.relative_gap)


@pytest.mark.slow
@pytest.mark.parametrize("function_id", list(FunctionId))
@pytest.mark.parametrize("p", [1, 2])
def test_trained_model_approaches_true_likelihood(function_id, p):
    config = TrainConfig(seed=0)
    report = synth_validate(function_id, p, config)
    assert report.relative_gap <= config.acceptance_gap


@pytest.mark.slow
def test_scores_fall_as_threshold_drops():
    dataset, _ = generate(GeneratorSpec(function_id=FunctionId.LINEAR, p=2, n=4000, seed=0))
    config = TrainConfig(p=2, seed=0, max_epochs=100)
    horizons = list(np.quantile(dataset.times, [0.25, 0.5, 0.75]))
    rows = sensitivity_sweep(dataset, config, [0.5, 0.45, 0.35, 0.25], horizons)
    averages = [np.mean([r.c_index for r in rows if r.quantile == q]) for q in (0.5, 0.45, 0.35, 0.25)]
    assert all(later <= earlier for earlier, later in zip(averages, averages[1:]))
