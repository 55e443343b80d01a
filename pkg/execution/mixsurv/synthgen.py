"""
Synthetic covariate-conditional Weibull mixtures.

x ~ U[0, 1]; the true (beta, eta) of every component are polynomials in x,
stored as coefficient matrices with rows

    beta_1, eta_1, beta_0.7, eta_0.7, beta_0.3, eta_0.3

and columns ordered highest power first (numpy.polyval order). p=1 uses the
first two rows with alpha = 1; p=2 uses the last four with alpha = (0.7, 0.3).
Lifetimes above the (1 - censor_fraction) quantile are censored, with the
likelihood's censored term evaluated at that quantile.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .dataio import Dataset, save_csv
from .errors import DomainError
from .mixloss import BatchParams, negative_log_likelihood
from .models import CensoringSpec, DatasetSchema, FunctionId, GeneratorSpec, MixtureParams
from .weibull import sample_batch

logger = logging.getLogger(__name__)

FEATURE_NAME = "x"
MIXTURE_WEIGHTS = {1: (1.0,), 2: (0.7, 0.3)}

COEFFICIENTS: Dict[FunctionId, Tuple[Tuple[float, ...], ...]] = {
    FunctionId.LINEAR: (
        (3, 2), (2, 1),
        (2, 1), (1, 2),
        (1, 2), (3, 1),
    ),
    FunctionId.QUADRATIC: (
        (2, 1, 1), (1, 2, 1),
        (2, 2, 1), (1, 3, 1),
        (1, 1, 2), (1, 0, 2),
    ),
    FunctionId.CUBIC: (
        (2, 0, 1, 1), (1, 1, 0, 1),
        (2, 0, 1, 1), (1, 1, 0, 1),
        (1, 2, 0, 1), (3, 2, 0, 1),
    ),
}


# ============================================
# TRUE PARAMETERS
# ============================================

def _rows_for(p: int) -> slice:
    if p == 1:
        return slice(0, 2)
    if p == 2:
        return slice(2, 6)
    raise DomainError(f"Synthetic ground truth exists for p in (1, 2), got {p}")


def true_param_arrays(function_id: FunctionId, p: int, x) -> BatchParams:
    """Vectorized true_params: one n x p mixture per entry of x."""
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)) or np.any((x < 0.0) | (x > 1.0)):
        raise DomainError("Covariate values must lie in [0, 1]")
    rows = COEFFICIENTS[FunctionId(function_id)][_rows_for(p)]
    values = np.stack([np.polyval(np.asarray(c, dtype=float), x) for c in rows], axis=1)
    alpha = np.broadcast_to(np.asarray(MIXTURE_WEIGHTS[p]), (x.size, p)).copy()
    return BatchParams(alpha=alpha, beta=values[:, 0::2], eta=values[:, 1::2])


def true_params(function_id: FunctionId, p: int, x: float) -> MixtureParams:
    """
    The true mixture at covariate value x.

    Raises:
        DomainError: x outside [0, 1] or p not in (1, 2)
    """
    return true_param_arrays(function_id, p, [x]).row(0)


# ============================================
# GENERATION
# ============================================

@dataclass(frozen=True)
class GroundTruth:
    params: BatchParams
    censoring: CensoringSpec
    nll: Optional[float] = None

    def mixture(self, i: int) -> MixtureParams:
        return self.params.row(i)

    def subset(self, indices) -> "GroundTruth":
        """Ground truth for ``dataset.subset(indices)``; evaluate it with real_nll."""
        return GroundTruth(params=self.params.take(np.asarray(indices)), censoring=self.censoring)


def generate(spec: GeneratorSpec) -> Tuple[Dataset, GroundTruth]:
    """Draw covariates, then component choices, then lifetimes, all from one seeded stream."""
    rng = np.random.default_rng(spec.seed)
    x = rng.random(spec.n)
    params = true_param_arrays(spec.function_id, spec.p, x)
    times = sample_batch(params.alpha, params.beta, params.eta, rng)

    threshold = float(np.quantile(times, 1.0 - spec.censor_fraction))
    deltas = (times <= threshold).astype(np.int8)
    censoring = CensoringSpec.global_threshold(threshold)
    dataset = Dataset(x.reshape(-1, 1), times, deltas, (FEATURE_NAME,))

    nll = negative_log_likelihood(params, times, deltas, censoring)
    logger.info(
        "Generated %s p=%d: n=%d, t_c=%.6g, %d censored, true NLL %.6f",
        FunctionId(spec.function_id).value, spec.p, spec.n, threshold,
        int(spec.n - deltas.sum()), nll,
    )
    return dataset, GroundTruth(params=params, censoring=censoring, nll=nll)


def real_nll(dataset: Dataset, truth: GroundTruth) -> float:
    """Censored-mixture NLL of ``dataset`` at the true per-row parameters (rows must match)."""
    return negative_log_likelihood(truth.params, dataset.times, dataset.deltas, truth.censoring)


def export_csv(dataset: Dataset, path) -> Tuple[Path, Path]:
    """Write ``dataset`` as CSV plus a ``<stem>.schema.json`` next to it."""
    path = Path(path)
    schema: DatasetSchema = save_csv(dataset, path)
    schema_path = path.with_name(f"{path.stem}.schema.json")
    schema_path.write_text(schema.model_dump_json(indent=2), encoding="utf-8")
    return path, schema_path
