import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mixsurv.errors import ConstraintViolationError, DomainError, ShapeMismatchError
from mixsurv.mixloss import (
    BatchParams,
    HeadOutputs,
    elu,
    negative_log_likelihood,
    nll_and_gradients,
    nll_gradients,
    params_from_raw,
    per_observation_nll,
)
from mixsurv.models import CensoringSpec

EPS = 1e-4


def single(beta, eta, n=1):
    return BatchParams(alpha=np.ones((n, 1)), beta=np.full((n, 1), beta), eta=np.full((n, 1), eta))


def random_raw(rng, n, p):
    return HeadOutputs(
        beta_pre=rng.normal(scale=0.8, size=(n, p)),
        eta_pre=rng.normal(scale=0.8, size=(n, p)),
        alpha_logits=rng.normal(size=(n, p)) if p > 1 else None,
    )


def random_batch(rng, n):
    times = rng.weibull(1.5, size=n) * 2.0 + 0.05
    deltas = (rng.random(n) < 0.6).astype(int)
    return times, deltas


# ============================================
# LOSS VALUES
# ============================================

def test_single_exponential_event():
    loss = negative_log_likelihood(single(1.0, 1.0), [1.0], [1], CensoringSpec.global_threshold(5.0))
    assert loss == pytest.approx(1.0)


def test_single_exponential_censored_at_threshold():
    loss = negative_log_likelihood(single(1.0, 1.0), [0.5], [0], CensoringSpec.global_threshold(2.0))
    assert loss == pytest.approx(2.0)


def test_per_observation_censoring_uses_own_time():
    loss = negative_log_likelihood(single(1.0, 1.0), [0.5], [0], CensoringSpec.per_observation())
    assert loss == pytest.approx(0.5)


def test_two_component_batch_matches_closed_form():
    params = BatchParams(
        alpha=np.array([[0.7, 0.3], [0.7, 0.3]]),
        beta=np.array([[1.0, 2.0], [1.0, 2.0]]),
        eta=np.array([[1.0, 2.0], [1.0, 2.0]]),
    )
    density = 0.7 * math.exp(-1.0) + 0.3 * (2 / 2) * (1 / 2) * math.exp(-(1 / 2) ** 2)
    survival = 0.7 * math.exp(-2.0) + 0.3 * math.exp(-1.0)
    loss = negative_log_likelihood(params, [1.0, 0.8], [1, 0], CensoringSpec.global_threshold(2.0))
    assert loss == pytest.approx(-math.log(density) - math.log(survival), rel=1e-12)


def test_loss_is_permutation_invariant_and_additive(rng):
    n, p = 12, 2
    params = params_from_raw(random_raw(rng, n, p), EPS)
    times, deltas = random_batch(rng, n)
    cens = CensoringSpec.global_threshold(1.5)
    base = negative_log_likelihood(params, times, deltas, cens)
    order = rng.permutation(n)
    assert negative_log_likelihood(params.take(order), times[order], deltas[order], cens) == pytest.approx(base, rel=1e-12)
    doubled = np.concatenate([np.arange(n), np.arange(n)])
    assert negative_log_likelihood(params.take(doubled), times[doubled], deltas[doubled], cens) == pytest.approx(2 * base, rel=1e-12)
    assert np.sum(per_observation_nll(params, times, deltas, cens)) == pytest.approx(base, rel=1e-12)


def test_grid_search_recovers_uncensored_mle(rng):
    true_beta, true_eta = 2.0, 3.0
    times = true_eta * rng.weibull(true_beta, size=4000)
    deltas = np.ones_like(times, dtype=int)
    cens = CensoringSpec.per_observation()
    betas = np.arange(1.5, 2.51, 0.05)
    etas = np.arange(2.5, 3.51, 0.05)
    losses = np.array([[negative_log_likelihood(single(b, e, times.size), times, deltas, cens) for e in etas] for b in betas])
    i, j = np.unravel_index(np.argmin(losses), losses.shape)
    assert betas[i] == pytest.approx(true_beta, abs=0.15)
    assert etas[j] == pytest.approx(true_eta, abs=0.15)


# ============================================
# INPUT CHECKS
# ============================================

def test_rejects_bad_indicators():
    with pytest.raises(DomainError):
        negative_log_likelihood(single(1.0, 1.0), [1.0], [2], CensoringSpec.per_observation())


def test_rejects_non_positive_times():
    with pytest.raises(DomainError):
        negative_log_likelihood(single(1.0, 1.0), [0.0], [1], CensoringSpec.per_observation())


def test_rejects_dimension_mismatch():
    with pytest.raises(ShapeMismatchError):
        negative_log_likelihood(single(1.0, 1.0, n=2), [1.0], [1], CensoringSpec.per_observation())
    with pytest.raises(ShapeMismatchError):
        BatchParams(alpha=np.ones((2, 1)), beta=np.ones((2, 2)), eta=np.ones((2, 1)))


def test_validate_flags_bad_rows():
    params = BatchParams(alpha=np.array([[0.6, 0.3]]), beta=np.array([[2.0, 2.0]]), eta=np.array([[1.0, 1.0]]))
    with pytest.raises(ConstraintViolationError):
        params.validate()
    with pytest.raises(ConstraintViolationError):
        single(0.5, 1.0).validate()


# ============================================
# OUTPUT MAP
# ============================================

def test_offsets():
    raw = HeadOutputs(beta_pre=np.array([[0.0], [-0.5]]), eta_pre=np.array([[0.0], [0.0]]))
    params = params_from_raw(raw, EPS)
    assert params.beta[0, 0] == 2.0
    assert params.eta[0, 0] == 1.0 + EPS
    assert params.beta[1, 0] == pytest.approx(2.0 + math.expm1(-0.5))
    assert np.all(params.alpha == 1.0)


def test_equal_logits_give_equal_weights():
    raw = HeadOutputs(beta_pre=np.zeros((1, 2)), eta_pre=np.zeros((1, 2)), alpha_logits=np.zeros((1, 2)))
    assert_allclose(params_from_raw(raw, EPS).alpha, [[0.5, 0.5]])


def test_elu_is_bounded_below():
    z = np.array([-50.0, -1.0, 0.0, 2.0])
    assert np.all(elu(z) > -1.0 - 1e-15)
    assert elu(z)[3] == 2.0


# ============================================
# GRADIENTS
# ============================================

def _finite_difference(raw, field, times, deltas, cens, step=1e-5):
    base = getattr(raw, field)
    grad = np.zeros_like(base)
    for index in np.ndindex(base.shape):
        values = []
        for sign in (1.0, -1.0):
            shifted = base.copy()
            shifted[index] += sign * step
            moved = HeadOutputs(**{**raw.__dict__, field: shifted})
            # rows are independent: difference only the perturbed row's term
            values.append(per_observation_nll(params_from_raw(moved, EPS), times, deltas, cens)[index[0]])
        grad[index] = (values[0] - values[1]) / (2 * step)
    return grad


def _assert_gradients_match(analytic, numeric, rtol=1e-4, floor=1e-8, atol=1e-9):
    mask = (np.abs(analytic) > floor) | (np.abs(numeric) > floor)
    error = np.abs(analytic - numeric)[mask]
    scale = np.maximum(np.abs(analytic), np.abs(numeric))[mask]
    assert np.all(error <= rtol * scale + atol), (error / scale).max()


@pytest.mark.parametrize("p", [1, 2, 3])
@pytest.mark.parametrize("cens", [CensoringSpec.global_threshold(1.7), CensoringSpec.per_observation()])
def test_gradients_match_finite_differences(p, cens):
    rng = np.random.default_rng(100 + p)
    raw = random_raw(rng, 16, p)
    times, deltas = random_batch(rng, 16)
    loss, grads = nll_and_gradients(raw, times, deltas, cens, EPS)
    assert loss == pytest.approx(negative_log_likelihood(params_from_raw(raw, EPS), times, deltas, cens))
    fields = ["beta_pre", "eta_pre"] + (["alpha_logits"] if p > 1 else [])
    for field in fields:
        _assert_gradients_match(getattr(grads, field), _finite_difference(raw, field, times, deltas, cens))


def test_single_component_has_no_logit_gradient():
    raw = HeadOutputs(beta_pre=np.zeros((1, 1)), eta_pre=np.zeros((1, 1)))
    grads = nll_gradients(raw, [1.0], [1], CensoringSpec.per_observation(), EPS)
    assert grads.alpha_logits is None


def test_exponential_eta_gradient_by_hand():
    # -log f = log eta + t / eta  =>  d/d eta = 1/eta - t/eta^2
    z_beta = -50.0
    for z_eta, t in [(0.3, 1.0), (-0.4, 2.5), (1.2, 0.7)]:
        raw = HeadOutputs(beta_pre=np.array([[z_beta]]), eta_pre=np.array([[z_eta]]))
        params = params_from_raw(raw, EPS)
        eta = params.eta[0, 0]
        grads = nll_gradients(raw, [t], [1], CensoringSpec.per_observation(), EPS)
        elu_slope = 1.0 if z_eta > 0 else math.exp(z_eta)
        expected = (1.0 / eta - t / eta ** 2) * elu_slope
        # expm1(-50) rounds to -1, so beta is exactly 1
        assert grads.eta_pre[0, 0] == pytest.approx(expected, rel=1e-9, abs=1e-12)
