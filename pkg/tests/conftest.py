import numpy as np
import pytest

from flaas.core import LabeledBatch, ModelParams


def random_model(rng: np.random.Generator, feature_dim: int, num_classes: int) -> ModelParams:
    return ModelParams(
        weights=rng.normal(scale=0.5, size=(feature_dim, num_classes)),
        biases=rng.normal(scale=0.5, size=num_classes),
    )


def random_batch(rng: np.random.Generator, n: int, feature_dim: int, num_classes: int) -> LabeledBatch:
    return LabeledBatch(
        features=rng.normal(size=(n, feature_dim)),
        labels=rng.integers(0, num_classes, size=n),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
