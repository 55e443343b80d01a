import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError
from scipy.integrate import trapezoid
from scipy.stats import kstest

from mixsurv.errors import DomainError
from mixsurv.models import MixtureParams, WeibullParams
from mixsurv.weibull import (
    gamma_fn,
    inverse_survival,
    log_density,
    log_hazard,
    log_survival,
    mean_lifetime,
    mixture_log_density,
    mixture_log_density_array,
    mixture_log_survival,
    sample,
    sample_batch,
    sample_many,
)


# ============================================
# SINGLE WEIBULL
# ============================================

def test_exponential_survival_at_scale():
    assert log_survival(1.0, WeibullParams(beta=1, eta=1)) == -1.0
    assert math.exp(log_survival(1.0, WeibullParams(beta=1, eta=1))) == pytest.approx(0.36787944117144233)


def test_log_density_is_hazard_plus_survival():
    w = WeibullParams(beta=2.5, eta=3.0)
    for t in (0.1, 1.0, 3.0, 7.5):
        assert log_density(t, w) == pytest.approx(log_hazard(t, w) + log_survival(t, w), rel=1e-14)


def test_exponential_hazard_is_constant():
    w = WeibullParams(beta=1.0, eta=4.0)
    assert log_hazard(0.5, w) == pytest.approx(-math.log(4.0))
    assert log_hazard(50.0, w) == pytest.approx(-math.log(4.0))


def test_log_survival_stays_finite_far_in_the_tail():
    value = log_survival(1e6, WeibullParams(beta=5, eta=1))
    assert np.isfinite(value)
    assert value == pytest.approx(-1e30)


@pytest.mark.parametrize("beta, eta", [(1.0, 1.0), (2.0, 3.0), (7.5, 0.2)])
def test_log_survival_decreases_from_zero(beta, eta):
    w = WeibullParams(beta=beta, eta=eta)
    values = [log_survival(t, w) for t in np.geomspace(1e-9, 50.0, 400)]
    assert np.all(np.diff(values) < 0.0)
    assert log_survival(1e-12, w) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("t", [0.0, -1.0, math.nan, math.inf])
def test_invalid_times_raise(t):
    with pytest.raises(DomainError):
        log_survival(t, WeibullParams(beta=2, eta=1))


def test_params_reject_shape_below_one():
    with pytest.raises(ValidationError):
        WeibullParams(beta=0.9, eta=1.0)
    with pytest.raises(ValidationError):
        WeibullParams(beta=2.0, eta=0.0)


# ============================================
# GAMMA
# ============================================

@pytest.mark.parametrize("x", [0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 25.5, 100.0])
def test_gamma_matches_math_gamma(x):
    assert_allclose(gamma_fn(x), math.gamma(x), rtol=1e-12)


def test_gamma_is_exact_on_integers():
    assert gamma_fn(1.0) == 1.0
    assert gamma_fn(2.0) == 1.0
    assert gamma_fn(5.0) == 24.0
    assert gamma_fn(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-14)


@pytest.mark.parametrize("x", [0.0, -2.0, math.nan])
def test_gamma_domain(x):
    with pytest.raises(DomainError):
        gamma_fn(x)


# ============================================
# MIXTURES
# ============================================

def test_single_component_mixture_equals_weibull():
    w = WeibullParams(beta=1.7, eta=2.2)
    m = MixtureParams.single(1.7, 2.2)
    for t in (0.3, 2.0, 9.0):
        assert mixture_log_survival(t, m) == log_survival(t, w)
        assert mixture_log_density(t, m) == log_density(t, w)


def test_identical_components_collapse():
    m = MixtureParams.from_arrays([0.7, 0.3], [2.0, 2.0], [1.5, 1.5])
    w = WeibullParams(beta=2.0, eta=1.5)
    assert mixture_log_density(1.0, m) == pytest.approx(log_density(1.0, w), rel=1e-14)
    assert mixture_log_survival(1.0, m) == pytest.approx(log_survival(1.0, w), rel=1e-14)


def test_two_component_survival():
    m = MixtureParams.from_arrays([0.7, 0.3], [1.0, 2.0], [1.0, 2.0])
    expected = math.log(0.7 * math.exp(-2.0) + 0.3 * math.exp(-1.0))
    assert mixture_log_survival(2.0, m) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(-1.624083, abs=1e-6)


@pytest.mark.parametrize("t_max", [0.8, 2.5, 12.0])
def test_density_integrates_to_failure_probability(t_max):
    alpha, beta, eta = np.array([0.7, 0.3]), np.array([1.5, 3.0]), np.array([1.0, 2.0])
    grid = np.linspace(0.0, t_max, 400_001)
    density = np.zeros_like(grid)
    # beta > 1 on both components: f(0) = 0
    density[1:] = np.exp(mixture_log_density_array(grid[1:], alpha, beta, eta))
    mass = trapezoid(density, grid)
    failure = 1.0 - math.exp(mixture_log_survival(t_max, MixtureParams.from_arrays(alpha, beta, eta)))
    assert mass == pytest.approx(failure, abs=1e-6)


def test_mixture_weights_must_sum_to_one():
    with pytest.raises(ValidationError):
        MixtureParams.from_arrays([0.6, 0.3], [2.0, 3.0], [1.0, 1.0])


def test_zero_weight_component_has_no_effect():
    m = MixtureParams.from_arrays([1.0, 0.0], [2.0, 7.0], [1.0, 0.1])
    w = WeibullParams(beta=2.0, eta=1.0)
    assert mixture_log_density(0.8, m) == pytest.approx(log_density(0.8, w), rel=1e-14)


def test_scalar_and_batched_agree_bitwise(rng):
    alpha = np.array([[0.25, 0.75], [0.5, 0.5], [0.9, 0.1]])
    beta = 1.0 + rng.random((3, 2)) * 3
    eta = 0.5 + rng.random((3, 2)) * 2
    t = np.array([0.4, 1.3, 2.2])
    batched = mixture_log_density_array(t, alpha, beta, eta)
    for i in range(3):
        m = MixtureParams.from_arrays(alpha[i], beta[i], eta[i])
        assert mixture_log_density(t[i], m) == batched[i]


# ============================================
# MEAN LIFETIME
# ============================================

@pytest.mark.parametrize("c", [0.5, 1.0, 3.25, 1234.5])
def test_exponential_mean_is_exact(c):
    assert mean_lifetime(MixtureParams.single(1.0, c)) == c


def test_weibull_mean():
    assert mean_lifetime(MixtureParams.single(2.0, 1.0)) == pytest.approx(0.886226925452758, rel=1e-12)


def test_mixture_mean_is_linear(rng):
    for _ in range(20):
        p = int(rng.integers(2, 5))
        alpha = rng.dirichlet(np.ones(p))
        alpha[-1] = 1.0 - alpha[:-1].sum()
        beta = 1.0 + rng.random(p) * 4
        eta = 0.1 + rng.random(p) * 10
        m = MixtureParams.from_arrays(alpha, beta, eta)
        parts = sum(a * mean_lifetime(MixtureParams.single(b, e)) for a, b, e in zip(alpha, beta, eta))
        assert mean_lifetime(m) == pytest.approx(parts, abs=1e-12 * max(1.0, parts))


# ============================================
# SAMPLING
# ============================================

def test_inverse_survival_hits_scale():
    assert inverse_survival(math.exp(-1.0), 1.0, 2.0) == pytest.approx(2.0)
    assert inverse_survival(1.0, 2.0, 5.0) == 0.0


def test_sampling_matches_distribution():
    draws = sample_many(MixtureParams.single(2.0, 1.0), 100_000, np.random.default_rng(2024))
    result = kstest(draws, lambda t: 1.0 - np.exp(-t ** 2))
    assert result.statistic < 0.01
    standard_error = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean() - math.gamma(1.5)) < 3 * standard_error


def test_sampling_is_deterministic_under_seed():
    m = MixtureParams.from_arrays([0.7, 0.3], [2.0, 3.0], [1.0, 4.0])
    a = sample(m, np.random.default_rng(9))
    b = sample(m, np.random.default_rng(9))
    assert a == b
    assert a > 0.0
    assert np.array_equal(sample_many(m, 50, np.random.default_rng(1)), sample_many(m, 50, np.random.default_rng(1)))


def test_mixture_sampling_picks_components_by_weight():
    # components far apart: share of draws above 10 estimates alpha_2
    m = MixtureParams.from_arrays([0.7, 0.3], [5.0, 5.0], [1.0, 100.0])
    draws = sample_many(m, 20_000, np.random.default_rng(5))
    assert np.mean(draws > 10.0) == pytest.approx(0.3, abs=0.02)


def test_sample_batch_uses_each_rows_parameters():
    n = 1000
    alpha = np.tile([1.0, 0.0], (n, 1))
    alpha[n // 2:] = [0.0, 1.0]
    beta = np.full((n, 2), 5.0)
    eta = np.tile([1.0, 1e4], (n, 1))
    draws = sample_batch(alpha, beta, eta, np.random.default_rng(11))
    assert draws.shape == (n,)
    assert np.all(draws[: n // 2] < 10.0)
    assert np.all(draws[n // 2:] > 10.0)
    again = sample_batch(alpha, beta, eta, np.random.default_rng(11))
    assert np.array_equal(draws, again)
