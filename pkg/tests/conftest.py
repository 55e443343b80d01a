import numpy as np
import pytest

from mixsurv.dataio import Dataset
from mixsurv.models import FunctionId, GeneratorSpec, TrainConfig
from mixsurv.synthgen import generate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quick_config():
    """Small enough to train in a second or two."""
    return TrainConfig(max_epochs=5, batch_size=32, patience=3, k_folds=3, learning_rate=1e-3, seed=7)


@pytest.fixture
def linear_sample():
    return generate(GeneratorSpec(function_id=FunctionId.LINEAR, p=1, n=240, seed=3))


@pytest.fixture
def mixed_dataset(rng):
    """Two quantitative covariates plus a one-hot qualitative column."""
    n = 60
    quantitative = rng.normal(size=(n, 2))
    group = rng.integers(0, 3, size=n)
    one_hot = np.eye(3)[group]
    times = rng.weibull(1.5, size=n) * 10.0 + 0.01
    deltas = (rng.random(n) < 0.7).astype(int)
    return Dataset(
        np.column_stack([quantitative, one_hot]),
        times,
        deltas,
        ("age", "size", "grade=a", "grade=b", "grade=c"),
        (False, False, True, True, True),
    )
