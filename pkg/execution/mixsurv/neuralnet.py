"""
The parameter network g_p: x -> (alpha, beta, eta).

Layout (sizes from Architecture, defaults shown):

    trunk: dense(d->128) -> batchnorm -> relu -> dense(128->64) -> relu -> dense(64->32) -> relu = z
    reg:   dense(32->16) -> batchnorm -> relu -> dense(16->8) -> relu -> dense(8->2p)
           first p columns -> ELU -> +2 = beta, last p columns -> ELU -> +1+eps = eta
    clf:   same hidden layout, dense(8->p) -> softmax = alpha       (only when p > 1)

Forward, backward, batch normalization and Adam are plain numpy. The network
works in model time units (data time / time_scale); predict_params converts
eta back to data units.
"""
import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from sklearn.model_selection import train_test_split

from .dataio import Dataset, ScalerStats
from .errors import (
    BatchTooSmallError,
    ConstraintViolationError,
    DatasetTooSmallError,
    DomainError,
    ModelFileError,
    ShapeMismatchError,
    StaleCacheError,
    TrainingDivergedError,
)
from .mixloss import BatchParams, HeadOutputs, negative_log_likelihood, nll_and_gradients, params_from_raw
from .models import (
    MODEL_FORMAT_VERSION,
    Architecture,
    CensoringMode,
    CensoringSpec,
    DatasetSchema,
    ModelFileHeader,
    TrainConfig,
)

logger = logging.getLogger(__name__)

DENSE = "dense"
BATCHNORM = "batchnorm"
RELU = "relu"

HEADER_KEY = "__header__"


# ============================================
# LAYER PLAN
# ============================================

@dataclass(frozen=True)
class Layer:
    kind: str
    name: str
    fan_in: int = 0
    fan_out: int = 0


def _block(prefix: str, fan_in: int, sizes, out: Optional[int]) -> List[Layer]:
    layers = []
    for i, size in enumerate(sizes):
        layers.append(Layer(DENSE, f"{prefix}.dense{i}", fan_in, size))
        if i == 0:
            layers.append(Layer(BATCHNORM, f"{prefix}.bn0", size, size))
        layers.append(Layer(RELU, f"{prefix}.relu{i}"))
        fan_in = size
    if out is not None:
        layers.append(Layer(DENSE, f"{prefix}.out", fan_in, out))
    return layers


def layer_plan(arch: Architecture) -> Dict[str, List[Layer]]:
    latent = arch.trunk_sizes[-1]
    plan = {
        "trunk": _block("trunk", arch.input_dim, arch.trunk_sizes, None),
        "reg": _block("reg", latent, arch.head_sizes, 2 * arch.n_components),
    }
    if arch.has_classifier:
        plan["clf"] = _block("clf", latent, arch.head_sizes, arch.n_components)
    return plan


# ============================================
# MODEL
# ============================================

@dataclass
class BatchNormState:
    """Views on one batch-normalization layer's arrays inside a NetworkModel."""
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5


class NetworkModel:
    """
    Weights, batch-norm statistics and metadata of one trained network.

    ``params`` holds every trainable tensor (dense W/b, batch-norm scale/shift);
    ``running`` holds batch-norm running means and variances. ``version`` is
    bumped by every optimizer step so stale forward caches can be detected.
    """

    def __init__(
        self,
        architecture: Architecture,
        params: Dict[str, np.ndarray],
        running: Dict[str, np.ndarray],
        offset_epsilon: float = 1e-4,
        time_scale: float = 1.0,
        feature_names: Optional[List[str]] = None,
        scaler: Optional[ScalerStats] = None,
        dataset_schema: Optional[DatasetSchema] = None,
    ):
        self.architecture = architecture
        self.params = params
        self.running = running
        self.offset_epsilon = float(offset_epsilon)
        self.time_scale = float(time_scale)
        self.feature_names = list(feature_names or [])
        self.scaler = scaler
        self.dataset_schema = dataset_schema
        self.version = 0
        self.plan = layer_plan(architecture)

    @property
    def p(self) -> int:
        return self.architecture.n_components

    def batchnorm(self, name: str) -> BatchNormState:
        return BatchNormState(
            scale=self.params[f"{name}.scale"],
            shift=self.params[f"{name}.shift"],
            running_mean=self.running[f"{name}.running_mean"],
            running_var=self.running[f"{name}.running_var"],
            momentum=self.architecture.bn_momentum,
            eps=self.architecture.bn_eps,
        )

    def copy(self) -> "NetworkModel":
        clone = copy.copy(self)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        clone.running = {k: v.copy() for k, v in self.running.items()}
        clone.feature_names = list(self.feature_names)
        return clone


def init_model(
    architecture: Architecture,
    rng: np.random.Generator,
    offset_epsilon: float = 1e-4,
    time_scale: float = 1.0,
) -> NetworkModel:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, identity batch norm."""
    params: Dict[str, np.ndarray] = {}
    running: Dict[str, np.ndarray] = {}
    for layers in layer_plan(architecture).values():
        for layer in layers:
            if layer.kind == DENSE:
                std = np.sqrt(2.0 / layer.fan_in)
                params[f"{layer.name}.W"] = rng.normal(0.0, std, size=(layer.fan_in, layer.fan_out))
                params[f"{layer.name}.b"] = np.zeros(layer.fan_out)
            elif layer.kind == BATCHNORM:
                params[f"{layer.name}.scale"] = np.ones(layer.fan_out)
                params[f"{layer.name}.shift"] = np.zeros(layer.fan_out)
                running[f"{layer.name}.running_mean"] = np.zeros(layer.fan_out)
                running[f"{layer.name}.running_var"] = np.ones(layer.fan_out)
    return NetworkModel(architecture, params, running, offset_epsilon, time_scale)


# ============================================
# BATCH NORMALIZATION
# ============================================

def batchnorm_forward(state: BatchNormState, a: np.ndarray, training: bool) -> Tuple[np.ndarray, tuple]:
    """
    Normalize activations column-wise, then apply scale and shift.

    Training mode uses batch statistics and updates the running statistics in
    place (running = momentum * running + (1 - momentum) * batch); inference
    mode uses the running statistics.
    """
    if training:
        n = a.shape[0]
        if n < 2:
            raise BatchTooSmallError(f"Batch normalization needs at least 2 rows in training, got {n}")
        mean = a.mean(axis=0)
        var = a.var(axis=0)
        state.running_mean[...] = state.momentum * state.running_mean + (1.0 - state.momentum) * mean
        state.running_var[...] = state.momentum * state.running_var + (1.0 - state.momentum) * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    normalized = (a - mean) * inv_std
    return state.scale * normalized + state.shift, (normalized, inv_std)


def batchnorm_backward(state: BatchNormState, cache: tuple, grad_out: np.ndarray):
    """Returns (grad_input, grad_scale, grad_shift) for a training-mode forward."""
    normalized, inv_std = cache
    n = grad_out.shape[0]
    grad_shift = grad_out.sum(axis=0)
    grad_scale = (grad_out * normalized).sum(axis=0)
    grad_norm = grad_out * state.scale
    grad_input = (inv_std / n) * (
        n * grad_norm - grad_norm.sum(axis=0) - normalized * (grad_norm * normalized).sum(axis=0)
    )
    return grad_input, grad_scale, grad_shift


# ============================================
# FORWARD / BACKWARD
# ============================================

@dataclass
class ForwardCache:
    version: int
    training: bool
    inputs: Dict[str, np.ndarray] = field(default_factory=dict)
    batchnorm: Dict[str, tuple] = field(default_factory=dict)


@dataclass
class ForwardResult:
    params: BatchParams
    raw: HeadOutputs
    cache: ForwardCache


def _check_finite(values: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(values)):
        raise TrainingDivergedError("Non-finite activations", layer=layer)


def _run_block(model: NetworkModel, layers: List[Layer], a: np.ndarray, training: bool,
               cache: ForwardCache) -> np.ndarray:
    for layer in layers:
        cache.inputs[layer.name] = a
        if layer.kind == DENSE:
            a = a @ model.params[f"{layer.name}.W"] + model.params[f"{layer.name}.b"]
        elif layer.kind == BATCHNORM:
            a, cache.batchnorm[layer.name] = batchnorm_forward(model.batchnorm(layer.name), a, training)
        else:
            a = np.maximum(a, 0.0)
        _check_finite(a, layer.name)
    return a


def check_constraints(params: BatchParams, offset_epsilon: float) -> None:
    """
    beta >= 1, eta >= offset_epsilon, alpha rows on the simplex.

    The bounds are inclusive: for very negative pre-activations ELU rounds to
    exactly -1 in float64.
    """
    try:
        params.validate(beta_floor=1.0, eta_floor=offset_epsilon)
    except ConstraintViolationError as e:
        raise ConstraintViolationError(f"Network output violates constraints: {e}")


def forward(model: NetworkModel, x: np.ndarray, training: bool = False,
            check: bool = True) -> ForwardResult:
    """
    Run the network on an n x d batch of standardized covariates.

    The returned params are in model time units.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.architecture.input_dim:
        raise ShapeMismatchError(
            f"Expected n x {model.architecture.input_dim} covariates, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise DomainError("Covariates must be finite")

    cache = ForwardCache(version=model.version, training=training)
    z = _run_block(model, model.plan["trunk"], x, training, cache)
    reg = _run_block(model, model.plan["reg"], z, training, cache)
    p = model.p
    logits = _run_block(model, model.plan["clf"], z, training, cache) if "clf" in model.plan else None

    raw = HeadOutputs(beta_pre=reg[:, :p], eta_pre=reg[:, p:], alpha_logits=logits)
    params = params_from_raw(raw, model.offset_epsilon)
    if check:
        check_constraints(params, model.offset_epsilon)
    return ForwardResult(params=params, raw=raw, cache=cache)


def _backprop_block(model: NetworkModel, layers: List[Layer], grad: np.ndarray,
                    cache: ForwardCache, grads: Dict[str, np.ndarray]) -> np.ndarray:
    for layer in reversed(layers):
        a_in = cache.inputs[layer.name]
        if layer.kind == DENSE:
            grads[f"{layer.name}.W"] = a_in.T @ grad
            grads[f"{layer.name}.b"] = grad.sum(axis=0)
            grad = grad @ model.params[f"{layer.name}.W"].T
        elif layer.kind == BATCHNORM:
            grad, grads[f"{layer.name}.scale"], grads[f"{layer.name}.shift"] = batchnorm_backward(
                model.batchnorm(layer.name), cache.batchnorm[layer.name], grad
            )
        else:
            # subgradient 0 at 0
            grad = grad * (a_in > 0.0)
    return grad


def backward(model: NetworkModel, cache: ForwardCache, output_gradients: HeadOutputs) -> Dict[str, np.ndarray]:
    """
    Backpropagate raw-output gradients to every trainable tensor.

    Raises:
        StaleCacheError: the cache is from inference mode or from an older model version
    """
    if not cache.training:
        raise StaleCacheError("backward needs a training-mode forward cache")
    if cache.version != model.version:
        raise StaleCacheError(
            f"Forward cache is from model version {cache.version}, model is at {model.version}"
        )
    grads: Dict[str, np.ndarray] = {}
    reg_grad = np.concatenate([output_gradients.beta_pre, output_gradients.eta_pre], axis=1)
    latent_grad = _backprop_block(model, model.plan["reg"], reg_grad, cache, grads)
    if "clf" in model.plan:
        clf_grad = output_gradients.alpha_logits
        if clf_grad is None:
            clf_grad = np.zeros((reg_grad.shape[0], model.p))
        latent_grad = latent_grad + _backprop_block(model, model.plan["clf"], clf_grad, cache, grads)
    _backprop_block(model, model.plan["trunk"], latent_grad, cache, grads)
    return grads


# ============================================
# ADAM
# ============================================

@dataclass
class OptimizerState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: NetworkModel, learning_rate: float = 1e-4, **kwargs) -> "OptimizerState":
        return cls(
            learning_rate=learning_rate,
            first_moment={k: np.zeros_like(v) for k, v in model.params.items()},
            second_moment={k: np.zeros_like(v) for k, v in model.params.items()},
            **kwargs,
        )


def adam_step(model: NetworkModel, state: OptimizerState,
              gradients: Dict[str, np.ndarray]) -> Tuple[NetworkModel, OptimizerState]:
    """One bias-corrected Adam update, in place on model and state."""
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in model.params.items():
        grad = gradients[name]
        if grad.shape != param.shape:
            raise ShapeMismatchError(f"Gradient for {name} has shape {grad.shape}, expected {param.shape}")
        m = state.first_moment.setdefault(name, np.zeros_like(param))
        v = state.second_moment.setdefault(name, np.zeros_like(param))
        m[...] = state.beta1 * m + (1.0 - state.beta1) * grad
        v[...] = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        param -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    model.version += 1
    return model, state


# ============================================
# TRAINING
# ============================================

@dataclass
class LossTrace:
    """Per-epoch NLL per observation, in data time units."""
    train_nll: List[float] = field(default_factory=list)
    val_nll: List[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


@dataclass
class TrainingResult:
    model: NetworkModel
    trace: LossTrace
    censoring: CensoringSpec


def _minibatches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    batches = [order[i:i + batch_size] for i in range(0, order.size, batch_size)]
    if len(batches) > 1 and batches[-1].size < 2:
        # a single leftover row cannot be batch-normalized
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def _model_units(censoring: CensoringSpec, time_scale: float) -> CensoringSpec:
    if censoring.mode == CensoringMode.GLOBAL_THRESHOLD:
        return CensoringSpec.global_threshold(censoring.t_c / time_scale)
    return censoring


def _nll_in_data_units(model_nll: float, deltas: np.ndarray, time_scale: float) -> float:
    # densities pick up 1/time_scale when times are rescaled; survival terms do not
    return model_nll + float(np.sum(deltas)) * float(np.log(time_scale))


def dataset_nll(model: NetworkModel, dataset: Dataset, censoring: CensoringSpec) -> float:
    """Summed NLL of a (standardized) dataset in inference mode, in data time units."""
    result = forward(model, dataset.covariates, training=False)
    model_nll = negative_log_likelihood(
        result.params, dataset.times / model.time_scale, dataset.deltas,
        _model_units(censoring, model.time_scale),
    )
    return _nll_in_data_units(model_nll, dataset.deltas, model.time_scale)


def train(
    dataset: Dataset,
    config: TrainConfig,
    validation: Optional[Dataset] = None,
    censoring: Optional[CensoringSpec] = None,
    scaler: Optional[ScalerStats] = None,
    dataset_schema: Optional[DatasetSchema] = None,
) -> TrainingResult:
    """
    Minibatch Adam on the summed censored mixture NLL with early stopping.

    ``dataset`` (and ``validation``) must already be standardized. When no
    validation set is given, ``config.val_fraction`` of ``dataset`` is held out.
    Returns the model from the epoch with the best validation NLL.

    Raises:
        TrainingDivergedError: the loss or an activation became non-finite
    """
    if len(dataset) < 2:
        raise DatasetTooSmallError("Training needs at least 2 records")
    if validation is None:
        fit_idx, val_idx = train_test_split(
            np.arange(len(dataset)), test_size=config.val_fraction,
            random_state=config.seed, shuffle=True,
        )
        dataset, validation = dataset.subset(np.sort(fit_idx)), dataset.subset(np.sort(val_idx))
    if censoring is None:
        censoring = config.censoring_for(dataset.times)

    time_scale = config.time_scale or float(np.median(dataset.times))
    model_censoring = _model_units(censoring, time_scale)
    times = dataset.times / time_scale
    rng = np.random.default_rng(config.seed)

    architecture = Architecture(input_dim=dataset.d, n_components=config.p)
    model = init_model(architecture, rng, config.offset_epsilon, time_scale)
    model.feature_names = list(dataset.feature_names)
    model.scaler = scaler
    model.dataset_schema = dataset_schema
    optimizer = OptimizerState.for_model(model, learning_rate=config.learning_rate)

    trace = LossTrace()
    best_model = model.copy()
    best_val = np.inf
    epochs_without_improvement = 0
    n = len(dataset)

    for epoch in range(config.max_epochs):
        epoch_loss = 0.0
        for batch in _minibatches(rng.permutation(n), config.batch_size):
            result = forward(model, dataset.covariates[batch], training=True, check=config.check_constraints)
            loss, head_grads = nll_and_gradients(
                result.raw, times[batch], dataset.deltas[batch], model_censoring, model.offset_epsilon,
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError("Non-finite training loss", epoch=epoch)
            grads = backward(model, result.cache, head_grads)
            adam_step(model, optimizer, grads)
            epoch_loss += loss

        train_nll = _nll_in_data_units(epoch_loss, dataset.deltas, time_scale) / n
        val_nll = dataset_nll(model, validation, censoring) / len(validation)
        if not np.isfinite(val_nll):
            raise TrainingDivergedError("Non-finite validation loss", epoch=epoch)
        trace.train_nll.append(train_nll)
        trace.val_nll.append(val_nll)
        logger.debug("epoch %d: train NLL %.6f, validation NLL %.6f", epoch, train_nll, val_nll)

        if val_nll < best_val:
            best_val = val_nll
            best_model = model.copy()
            trace.best_epoch = epoch
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                trace.stopped_early = True
                logger.info("Early stopping at epoch %d (best epoch %d)", epoch, trace.best_epoch)
                break

    return TrainingResult(model=best_model, trace=trace, censoring=censoring)


# ============================================
# INFERENCE
# ============================================

def predict_params(model: NetworkModel, x: np.ndarray) -> BatchParams:
    """Inference-mode mixture parameters with eta in data time units."""
    params = forward(model, x, training=False).params
    return BatchParams(alpha=params.alpha, beta=params.beta, eta=params.eta * model.time_scale)


# ============================================
# PERSISTENCE
# ============================================

def save_model(model: NetworkModel, path) -> Path:
    """
    Write a model as a single .npz file.

    Every tensor is stored under "param:<name>" / "running:<name>"; the JSON
    header (ModelFileHeader) sits under "__header__".
    """
    path = Path(path)
    header = ModelFileHeader(
        format_version=MODEL_FORMAT_VERSION,
        architecture=model.architecture,
        offset_epsilon=model.offset_epsilon,
        time_scale=model.time_scale,
        feature_names=model.feature_names,
        has_scaler=model.scaler is not None,
        dataset_schema=model.dataset_schema,
        parameter_names=list(model.params),
        running_names=list(model.running),
    )
    arrays = {f"param:{k}": v for k, v in model.params.items()}
    arrays.update({f"running:{k}": v for k, v in model.running.items()})
    if model.scaler is not None:
        arrays["scaler:mean"] = model.scaler.mean
        arrays["scaler:scale"] = model.scaler.scale
    with open(path, "wb") as fh:
        np.savez(fh, **{HEADER_KEY: np.array(header.model_dump_json())}, **arrays)
    return path


def load_model(path) -> NetworkModel:
    """
    Read a model written by save_model.

    Raises:
        ModelFileError: missing file, unknown format version or missing tensors
    """
    path = Path(path)
    if not path.exists():
        raise ModelFileError(f"Model file not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            header = ModelFileHeader.model_validate_json(str(data[HEADER_KEY]))
            if header.format_version != MODEL_FORMAT_VERSION:
                raise ModelFileError(
                    f"Unsupported model format version {header.format_version} "
                    f"(expected {MODEL_FORMAT_VERSION})"
                )
            params = {k: data[f"param:{k}"].copy() for k in header.parameter_names}
            running = {k: data[f"running:{k}"].copy() for k in header.running_names}
            scaler = None
            if header.has_scaler:
                scaler = ScalerStats(
                    mean=data["scaler:mean"], scale=data["scaler:scale"],
                    feature_names=header.feature_names,
                )
    except ModelFileError:
        raise
    except (KeyError, ValueError, OSError, json.JSONDecodeError) as e:
        raise ModelFileError(f"Cannot read model file {path}: {e}")

    model = NetworkModel(
        header.architecture, params, running,
        offset_epsilon=header.offset_epsilon,
        time_scale=header.time_scale,
        feature_names=header.feature_names,
        scaler=scaler,
        dataset_schema=header.dataset_schema,
    )
    expected = {
        f"{layer.name}.{suffix}"
        for layers in model.plan.values() for layer in layers
        for suffix in (("W", "b") if layer.kind == DENSE else ("scale", "shift") if layer.kind == BATCHNORM else ())
    }
    if set(params) != expected:
        raise ModelFileError(f"Model file {path} does not match its architecture")
    return model
