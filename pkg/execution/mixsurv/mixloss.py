"""
Censored Weibull-mixture negative log-likelihood.

For observation i with mixture m_i:

    loss_i = -[delta_i * log sum_k alpha_ik f_ik(t_i)
               + (1 - delta_i) * log sum_k alpha_ik S_ik(t*)]

with t* = t_c (GLOBAL_THRESHOLD) or t* = t_i (PER_OBSERVATION). The batch loss
is the SUM of loss_i, not the mean.

Gradients are analytic and flow back to the raw head outputs: the softmax
logits of the classification head and the pre-activations of the two ELU
output units (beta = elu(z_beta) + 2, eta = elu(z_eta) + 1 + eps).
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import softmax

from .errors import ConstraintViolationError, DomainError, ShapeMismatchError
from .models import CensoringMode, CensoringSpec, MixtureParams
from .weibull import (
    log_density_array,
    log_survival_array,
    mixture_log_density_array,
    mixture_log_survival_array,
)

BETA_OFFSET = 2.0
ETA_OFFSET = 1.0
ALPHA_ROW_TOLERANCE = 1e-7


# ============================================
# BATCH TYPES
# ============================================

@dataclass(frozen=True)
class BatchParams:
    """One Weibull mixture per observation; every array is n x p."""
    alpha: np.ndarray
    beta: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.alpha), np.shape(self.beta), np.shape(self.eta)}
        if len(shapes) != 1 or np.ndim(self.alpha) != 2:
            raise ShapeMismatchError(
                f"alpha, beta, eta must be equal-shape n x p arrays, got {sorted(shapes)}"
            )

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @property
    def p(self) -> int:
        return self.alpha.shape[1]

    def row(self, i: int) -> MixtureParams:
        return MixtureParams.from_arrays(self.alpha[i], self.beta[i], self.eta[i])

    def take(self, indices) -> "BatchParams":
        return BatchParams(self.alpha[indices], self.beta[indices], self.eta[indices])

    def validate(self, beta_floor: float = 1.0, eta_floor: float = 0.0) -> None:
        """
        Check the mixture constraints on every row: beta >= beta_floor, eta > 0 and
        eta >= eta_floor, alpha rows on the simplex.
        """
        row_sums = np.sum(self.alpha, axis=1)
        if np.any(np.abs(row_sums - 1.0) > ALPHA_ROW_TOLERANCE) or np.any(self.alpha < 0.0):
            raise ConstraintViolationError("alpha rows must be non-negative and sum to 1")
        if not np.all(self.beta >= beta_floor):
            raise ConstraintViolationError(f"beta must be >= {beta_floor}")
        if not (np.all(self.eta > 0.0) and np.all(self.eta >= eta_floor)):
            raise ConstraintViolationError(f"eta must be > 0 and >= {eta_floor}")


@dataclass(frozen=True)
class HeadOutputs:
    """
    Raw network outputs before the offsets, ELU and softmax.

    alpha_logits is None when p == 1 (no classification head). Gradients with
    respect to the raw outputs use the same container.
    """
    beta_pre: np.ndarray
    eta_pre: np.ndarray
    alpha_logits: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.beta_pre.shape[0]

    @property
    def p(self) -> int:
        return self.beta_pre.shape[1]


# ============================================
# ACTIVATIONS
# ============================================

def elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))


def elu_derivative(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


def params_from_raw(raw: HeadOutputs, offset_epsilon: float) -> BatchParams:
    """Apply ELU + offsets to the regression outputs and softmax to the logits."""
    beta = elu(raw.beta_pre) + BETA_OFFSET
    eta = elu(raw.eta_pre) + ETA_OFFSET + offset_epsilon
    if raw.alpha_logits is None:
        alpha = np.ones_like(beta)
    else:
        alpha = softmax(raw.alpha_logits, axis=1)
    return BatchParams(alpha=alpha, beta=beta, eta=eta)


# ============================================
# LIKELIHOOD
# ============================================

def _check_inputs(n: int, times, deltas) -> Tuple[np.ndarray, np.ndarray]:
    times = np.asarray(times, dtype=float)
    deltas = np.asarray(deltas)
    if times.shape != (n,) or deltas.shape != (n,):
        raise ShapeMismatchError(
            f"Expected {n} times and deltas, got shapes {times.shape} and {deltas.shape}"
        )
    if not np.all(np.isfinite(times)) or np.any(times <= 0.0):
        raise DomainError("All times must be finite and > 0")
    if not np.all((deltas == 0) | (deltas == 1)):
        raise DomainError("Event indicators must be 0 or 1")
    return times, deltas.astype(bool)


def _censored_times(times: np.ndarray, cens: CensoringSpec) -> np.ndarray:
    if cens.mode == CensoringMode.PER_OBSERVATION:
        return times
    return np.full_like(times, cens.t_c)


def per_observation_nll(params: BatchParams, times, deltas, cens: CensoringSpec) -> np.ndarray:
    """The n summands of negative_log_likelihood."""
    times, events = _check_inputs(params.n, times, deltas)
    log_f = mixture_log_density_array(times, params.alpha, params.beta, params.eta)
    log_s = mixture_log_survival_array(_censored_times(times, cens), params.alpha, params.beta, params.eta)
    return -np.where(events, log_f, log_s)


def negative_log_likelihood(params: BatchParams, times, deltas, cens: CensoringSpec) -> float:
    return float(np.sum(per_observation_nll(params, times, deltas, cens)))


# ============================================
# GRADIENTS
# ============================================

def _responsibilities(log_components: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return softmax(log_components + np.log(alpha), axis=1)


def nll_and_gradients(
    raw: HeadOutputs,
    times,
    deltas,
    cens: CensoringSpec,
    offset_epsilon: float,
) -> Tuple[float, HeadOutputs]:
    """
    Loss and its gradient with respect to every raw head output.

    Returns:
        (loss, gradients) where gradients mirrors the shapes of ``raw``
    """
    params = params_from_raw(raw, offset_epsilon)
    times, events = _check_inputs(params.n, times, deltas)
    t_star = _censored_times(times, cens)
    alpha, beta, eta = params.alpha, params.beta, params.eta

    with np.errstate(over="ignore", invalid="ignore"):
        log_f_k = log_density_array(times[:, None], beta, eta)
        log_s_k = log_survival_array(t_star[:, None], beta, eta)

        # event rows: d log f / d beta, d log f / d eta
        log_u = np.log(times)[:, None] - np.log(eta)
        w = np.power(times[:, None] / eta, beta)
        dlogf_dbeta = 1.0 / beta + log_u - w * log_u
        dlogf_deta = (beta / eta) * (w - 1.0)

        # censored rows: d log S / d beta, d log S / d eta at t*
        log_u_c = np.log(t_star)[:, None] - np.log(eta)
        w_c = np.power(t_star[:, None] / eta, beta)
        dlogs_dbeta = -w_c * log_u_c
        dlogs_deta = beta * w_c / eta

    event_rows = events[:, None]
    resp = np.where(
        event_rows,
        _responsibilities(log_f_k, alpha),
        _responsibilities(log_s_k, alpha),
    )
    grad_beta = -resp * np.where(event_rows, dlogf_dbeta, dlogs_dbeta)
    grad_eta = -resp * np.where(event_rows, dlogf_deta, dlogs_deta)

    gradients = HeadOutputs(
        beta_pre=grad_beta * elu_derivative(raw.beta_pre),
        eta_pre=grad_eta * elu_derivative(raw.eta_pre),
        alpha_logits=None if raw.alpha_logits is None else alpha - resp,
    )

    log_f = mixture_log_density_array(times, alpha, beta, eta)
    log_s = mixture_log_survival_array(t_star, alpha, beta, eta)
    loss = float(np.sum(-np.where(events, log_f, log_s)))
    return loss, gradients


def nll_gradients(
    raw: HeadOutputs,
    times,
    deltas,
    cens: CensoringSpec,
    offset_epsilon: float = 1e-4,
) -> HeadOutputs:
    """Analytic d(loss)/d(raw head outputs)."""
    _, gradients = nll_and_gradients(raw, times, deltas, cens, offset_epsilon)
    return gradients
