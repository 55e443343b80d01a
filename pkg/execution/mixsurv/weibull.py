"""
Closed-form Weibull and Weibull-mixture math in the log domain.

Two layers:
- ``*_array`` kernels work on numpy arrays whose last axis indexes mixture
  components; they do no validation and are what the loss and the network use.
- The scalar API (log_survival, mixture_log_density, mean_lifetime, ...) takes
  the pydantic WeibullParams / MixtureParams, validates the time argument and
  calls the same kernels, so scalar and batched results agree bitwise.
"""
import math
from typing import Union

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError
from .models import MixtureParams, WeibullParams

ArrayLike = Union[float, np.ndarray]

# Lanczos approximation, g=7 with 9 coefficients
LANCZOS_G = 7.0
LANCZOS_COEFFICIENTS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_SQRT_TWO_PI = math.sqrt(2.0 * math.pi)
# Gamma(n) = (n-1)! is exact in float64 up to n = 23 and representable up to 171
_FACTORIALS = np.array([float(math.factorial(k)) for k in range(171)])


# ============================================
# GAMMA FUNCTION
# ============================================

def _lanczos_gamma(x: np.ndarray) -> np.ndarray:
    reflect = x < 0.5
    z = np.where(reflect, 1.0 - x, x) - 1.0
    series = np.full_like(z, LANCZOS_COEFFICIENTS[0])
    for i, coefficient in enumerate(LANCZOS_COEFFICIENTS[1:], start=1):
        series = series + coefficient / (z + i)
    t = z + LANCZOS_G + 0.5
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        value = _SQRT_TWO_PI * np.power(t, z + 0.5) * np.exp(-t) * series
        # reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x)
        reflected = math.pi / (np.sin(math.pi * x) * value)
    return np.where(reflect, reflected, value)


def gamma_array(x: np.ndarray) -> np.ndarray:
    """Gamma on positive arrays; integer arguments come from a factorial table."""
    x = np.asarray(x, dtype=float)
    lanczos = _lanczos_gamma(x)
    is_integer = (x == np.floor(x)) & (x >= 1.0) & (x <= _FACTORIALS.size)
    index = np.clip(np.where(is_integer, x, 1.0).astype(np.int64) - 1, 0, _FACTORIALS.size - 1)
    return np.where(is_integer, _FACTORIALS[index], lanczos)


def gamma_fn(x: ArrayLike) -> ArrayLike:
    """
    Gamma function via the Lanczos approximation.

    Raises:
        DomainError: if any x is non-finite or not strictly positive
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"gamma_fn requires finite x > 0, got {x!r}")
    result = gamma_array(arr)
    return float(result) if result.ndim == 0 else result


# ============================================
# ARRAY KERNELS
# ============================================

def log_survival_array(t, beta, eta):
    return -np.power(t / eta, beta)


def log_hazard_array(t, beta, eta):
    return np.log(beta) - np.log(eta) + (beta - 1.0) * (np.log(t) - np.log(eta))


def log_density_array(t, beta, eta):
    # log f = log(lambda * S)
    return log_hazard_array(t, beta, eta) - np.power(t / eta, beta)


def _check_weights(alpha: np.ndarray) -> None:
    if np.any(np.sum(alpha, axis=-1) <= 0.0):
        raise DomainError("Every mixture needs at least one positive weight")


def _mixture_reduce(kernel, t, alpha, beta, eta):
    alpha = np.asarray(alpha, dtype=float)
    t = np.asarray(t, dtype=float)
    if alpha.shape[-1] == 1:
        return kernel(t, beta[..., 0], eta[..., 0])
    _check_weights(alpha)
    return logsumexp(kernel(t[..., None], beta, eta), b=alpha, axis=-1)


def mixture_log_survival_array(t, alpha, beta, eta):
    """log sum_k alpha_k S_k(t); t has the batch shape, parameters add a trailing p axis."""
    return _mixture_reduce(log_survival_array, t, alpha, beta, eta)


def mixture_log_density_array(t, alpha, beta, eta):
    """log sum_k alpha_k f_k(t)."""
    return _mixture_reduce(log_density_array, t, alpha, beta, eta)


def mixture_mean_lifetime_array(alpha, beta, eta):
    """sum_k alpha_k eta_k Gamma(1 + 1/beta_k) along the last axis."""
    return np.sum(alpha * eta * gamma_array(1.0 + 1.0 / beta), axis=-1)


def inverse_survival(u: ArrayLike, beta: ArrayLike, eta: ArrayLike) -> ArrayLike:
    """Time t with S(t) = u, for u in (0, 1]."""
    return eta * np.power(-np.log(u), 1.0 / beta)


def _open_unit_uniform(rng: np.random.Generator, size: int) -> np.ndarray:
    u = rng.random(size)
    zero = u == 0.0
    while np.any(zero):
        u[zero] = rng.random(int(zero.sum()))
        zero = u == 0.0
    return u


def sample_batch(alpha, beta, eta, rng: np.random.Generator) -> np.ndarray:
    """
    Draw one lifetime per row of an n x p parameter batch.

    All component choices are drawn first, then all uniforms, so a fixed
    seed always gives the same sample.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    n, p = alpha.shape
    cumulative = np.cumsum(alpha, axis=1)
    r = rng.random(n)
    k = np.minimum(np.sum(r[:, None] >= cumulative, axis=1), p - 1)
    u = _open_unit_uniform(rng, n)
    rows = np.arange(n)
    return inverse_survival(u, beta[rows, k], eta[rows, k])


# ============================================
# SCALAR API
# ============================================

def _check_time(t: float) -> float:
    try:
        value = float(t)
    except (TypeError, ValueError):
        raise DomainError(f"Time must be a real number, got {t!r}")
    if not math.isfinite(value) or value <= 0.0:
        raise DomainError(f"Time must be finite and > 0, got {t!r}")
    return value


def _one(value: float) -> np.ndarray:
    return np.array([value], dtype=float)


def log_survival(t: float, w: WeibullParams) -> float:
    """-(t/eta)^beta, never forming exp then log."""
    return float(log_survival_array(_one(_check_time(t)), _one(w.beta), _one(w.eta))[0])


def log_hazard(t: float, w: WeibullParams) -> float:
    return float(log_hazard_array(_one(_check_time(t)), _one(w.beta), _one(w.eta))[0])


def log_density(t: float, w: WeibullParams) -> float:
    return float(log_density_array(_one(_check_time(t)), _one(w.beta), _one(w.eta))[0])


def mixture_log_survival(t: float, m: MixtureParams) -> float:
    t = _one(_check_time(t))
    return float(mixture_log_survival_array(t, m.alpha[None], m.beta[None], m.eta[None])[0])


def mixture_log_density(t: float, m: MixtureParams) -> float:
    t = _one(_check_time(t))
    return float(mixture_log_density_array(t, m.alpha[None], m.beta[None], m.eta[None])[0])


def mean_lifetime(m: MixtureParams) -> float:
    """Mixture mean: alpha . diag(eta) . Gamma(1 + 1/beta)^T."""
    return float(mixture_mean_lifetime_array(m.alpha[None], m.beta[None], m.eta[None])[0])


def sample(m: MixtureParams, rng: np.random.Generator) -> float:
    return float(sample_batch(m.alpha[None], m.beta[None], m.eta[None], rng)[0])


def sample_many(m: MixtureParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` independent lifetimes from one mixture."""
    shape = (size, m.p)
    return sample_batch(
        np.broadcast_to(m.alpha, shape), np.broadcast_to(m.beta, shape),
        np.broadcast_to(m.eta, shape), rng,
    )
