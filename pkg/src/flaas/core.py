"""Numerical core: softmax head over frozen features, SGD, and federated averaging.

The trainable model is a single dense layer plus softmax (multinomial logistic
regression) over a fixed feature space. All arithmetic is float64 and every
operation is a pure function of its arguments, seeds included, so runs are
bit-reproducible.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, ProtocolError

WEIGHT_INIT_RANGE = 0.05


def derive_seed(*parts) -> int:
    """Derive a stable 63-bit sub-seed from arbitrary labeled parts.

    Hash-based so independent streams (init, shuffling, selection, dropout)
    never collide just because their integer seeds happen to be close.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _as_f64(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class ModelParams:
    """Dense-layer weights and biases of the softmax head.

    weights has shape (feature_dim, num_classes), biases (num_classes,).
    Instances are immutable; training ops return new instances.
    """

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        w = _as_f64(self.weights, "weights")
        b = _as_f64(self.biases, "biases")
        if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
            raise ContractError(f"inconsistent parameter shapes {w.shape} / {b.shape}")
        if w.shape[0] < 1 or w.shape[1] < 2:
            raise ConfigurationError("need feature_dim >= 1 and num_classes >= 2")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class GradientVector:
    """Gradient of the mean cross-entropy, with the sample count and loss it was taken at."""

    d_weights: np.ndarray
    d_biases: np.ndarray
    sample_count: int
    loss_at_point: float

    def __post_init__(self):
        dw = _as_f64(self.d_weights, "d_weights")
        db = _as_f64(self.d_biases, "d_biases")
        dw.setflags(write=False)
        db.setflags(write=False)
        object.__setattr__(self, "d_weights", dw)
        object.__setattr__(self, "d_biases", db)
        if self.sample_count < 1:
            raise ContractError("sample_count must be >= 1")
        if not (self.loss_at_point >= 0.0 and np.isfinite(self.loss_at_point)):
            raise ContractError("loss_at_point must be finite and >= 0")


@dataclass(frozen=True)
class LabeledBatch:
    """Feature rows with integer class labels; lengths equal and >= 1."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = _as_f64(self.features, "features")
        if x.ndim == 1:
            x = x.reshape(1, -1)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(x) != len(y) or len(y) < 1:
            raise ContractError("features and labels must have equal length >= 1")
        if np.any(y < 0):
            raise ContractError("labels must be non-negative class indices")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class TrainConfig:
    """Local-training hyperparameters: epochs E, batch size B, learning rate eta."""

    epochs: int
    batch_size: int
    learning_rate: float
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")


@dataclass(frozen=True)
class FeatureExtractor:
    """Frozen random projection + rectifier standing in for a pretrained base network."""

    projection: np.ndarray
    seed: int = field(default=0)

    def __post_init__(self):
        p = _as_f64(self.projection, "projection")
        p.setflags(write=False)
        object.__setattr__(self, "projection", p)

    @property
    def raw_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.projection.shape[1]


def make_extractor(raw_dim: int, feature_dim: int, seed: int) -> FeatureExtractor:
    if raw_dim < 1 or feature_dim < 1:
        raise ConfigurationError("raw_dim and feature_dim must be >= 1")
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((raw_dim, feature_dim)) / np.sqrt(raw_dim)
    return FeatureExtractor(projection=projection, seed=seed)


def extract_features(extractor: FeatureExtractor, raw: np.ndarray) -> np.ndarray:
    """Project raw inputs into the frozen feature space (rectified linear)."""
    x = _as_f64(raw, "raw input")
    if x.shape[-1] != extractor.raw_dim:
        raise ContractError(
            f"raw input has dim {x.shape[-1]}, extractor expects {extractor.raw_dim}"
        )
    return np.maximum(x @ extractor.projection, 0.0)


def init_model(feature_dim: int, num_classes: int, seed: int) -> ModelParams:
    """Fresh head: seeded uniform weights in [-0.05, 0.05], zero biases."""
    if feature_dim < 1 or num_classes < 2:
        raise ConfigurationError(
            f"invalid model dimensions ({feature_dim}, {num_classes})"
        )
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-WEIGHT_INIT_RANGE, WEIGHT_INIT_RANGE, (feature_dim, num_classes))
    return ModelParams(weights=weights, biases=np.zeros(num_classes))


def _check_features(model: ModelParams, x: np.ndarray) -> np.ndarray:
    x = _as_f64(x, "features")
    if x.shape[-1] != model.feature_dim:
        raise ContractError(
            f"feature dim {x.shape[-1]} does not match model dim {model.feature_dim}"
        )
    return x


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    # Max-subtraction keeps exp() from overflowing for large logits.
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def predict(model: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector (or a matrix of rows)."""
    x = _check_features(model, features)
    return np.exp(_log_softmax(x @ model.weights + model.biases))


def loss(model: ModelParams, batch: LabeledBatch) -> float:
    """Mean negative log-likelihood of the batch labels."""
    x = _check_features(model, batch.features)
    if np.any(batch.labels >= model.num_classes):
        raise ContractError("label out of range for model")
    logp = _log_softmax(x @ model.weights + model.biases)
    return float(-logp[np.arange(len(batch)), batch.labels].mean())


def gradient(model: ModelParams, batch: LabeledBatch) -> GradientVector:
    """Exact analytic gradient of the mean cross-entropy over the batch."""
    x = _check_features(model, batch.features)
    if np.any(batch.labels >= model.num_classes):
        raise ContractError("label out of range for model")
    n = len(batch)
    logp = _log_softmax(x @ model.weights + model.biases)
    probs = np.exp(logp)
    resid = probs
    resid[np.arange(n), batch.labels] -= 1.0
    resid /= n
    return GradientVector(
        d_weights=x.T @ resid,
        d_biases=resid.sum(axis=0),
        sample_count=n,
        loss_at_point=float(-logp[np.arange(n), batch.labels].mean()),
    )


def sgd_step(model: ModelParams, grad: GradientVector, learning_rate: float) -> ModelParams:
    """One descent step w - eta*g; the input model is left untouched."""
    if not learning_rate > 0:
        raise ContractError("learning_rate must be > 0")
    if grad.d_weights.shape != model.weights.shape or grad.d_biases.shape != model.biases.shape:
        raise ContractError("gradient shape does not match model")
    return ModelParams(
        weights=model.weights - learning_rate * grad.d_weights,
        biases=model.biases - learning_rate * grad.d_biases,
    )


def iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield per-epoch shuffled index batches; the final partial batch is kept."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def local_train(model: ModelParams, dataset: LabeledBatch, config: TrainConfig) -> ModelParams:
    """E epochs of mini-batch SGD with seeded shuffling; deterministic in all inputs."""
    rng = np.random.default_rng(config.seed)
    current = model
    for _ in range(config.epochs):
        for idx in iter_batches(len(dataset), config.batch_size, rng):
            sub = LabeledBatch(features=dataset.features[idx], labels=dataset.labels[idx])
            current = sgd_step(current, gradient(current, sub), config.learning_rate)
    return current


def federated_aggregate(updates: list[tuple[ModelParams, int]]) -> ModelParams:
    """Sample-count-weighted average of client models, in the given order.

    Callers that need bit reproducibility must pass updates in a canonical
    order (ascending client id). Computed as an anchored sum
    w_1 + sum_k (n_k/n)(w_k - w_1) so that identical inputs average to
    themselves exactly.
    """
    if not updates:
        raise ProtocolError("cannot aggregate an empty update list")
    shape = (updates[0][0].weights.shape, updates[0][0].biases.shape)
    total = 0
    for params, count in updates:
        if (params.weights.shape, params.biases.shape) != shape:
            raise ContractError("aggregation inputs have mismatched shapes")
        if count < 1:
            raise ContractError("sample counts must be >= 1")
        total += int(count)
    anchor = updates[0][0]
    acc_w = np.zeros_like(anchor.weights)
    acc_b = np.zeros_like(anchor.biases)
    for params, count in updates:
        share = count / total
        acc_w += share * (params.weights - anchor.weights)
        acc_b += share * (params.biases - anchor.biases)
    return ModelParams(weights=anchor.weights + acc_w, biases=anchor.biases + acc_b)


def aggregate_gradients(
    start: ModelParams,
    grads: list[tuple[GradientVector, int]],
    learning_rate: float,
) -> ModelParams:
    """Server-side gradient averaging: w - eta * sum_k (n_k/n) g_k, in the given order."""
    if not grads:
        raise ProtocolError("cannot aggregate an empty gradient list")
    total = 0
    for grad, count in grads:
        if grad.d_weights.shape != start.weights.shape or grad.d_biases.shape != start.biases.shape:
            raise ContractError("gradient shape does not match model")
        if count < 1:
            raise ContractError("sample counts must be >= 1")
        total += int(count)
    acc_w = np.zeros_like(start.weights)
    acc_b = np.zeros_like(start.biases)
    for grad, count in grads:
        share = count / total
        acc_w += share * grad.d_weights
        acc_b += share * grad.d_biases
    return ModelParams(
        weights=start.weights - learning_rate * acc_w,
        biases=start.biases - learning_rate * acc_b,
    )


def evaluate(model: ModelParams, test_set: LabeledBatch) -> float:
    """Fraction of samples whose argmax class matches the label (ties -> lowest index)."""
    probs = predict(model, test_set.features)
    predicted = np.argmax(probs, axis=-1)  # np.argmax takes the first maximum
    return float(np.mean(predicted == test_set.labels))


# --- canonical binary layout -------------------------------------------------
#
# header: feature_dim, num_classes as uint32 little-endian
# body:   weights row-major then biases, float64 little-endian

_HEADER = struct.Struct("<II")


def to_bytes(model: ModelParams) -> bytes:
    header = _HEADER.pack(model.feature_dim, model.num_classes)
    body = model.weights.astype("<f8").tobytes(order="C")
    body += model.biases.astype("<f8").tobytes()
    return header + body


def from_bytes(payload: bytes) -> ModelParams:
    if len(payload) < _HEADER.size:
        raise ContractError("model payload shorter than header")
    feature_dim, num_classes = _HEADER.unpack_from(payload)
    expected = _HEADER.size + 8 * (feature_dim * num_classes + num_classes)
    if len(payload) != expected:
        raise ContractError(
            f"model payload length {len(payload)} does not match header ({expected})"
        )
    flat = np.frombuffer(payload, dtype="<f8", offset=_HEADER.size)
    weights = flat[: feature_dim * num_classes].reshape(feature_dim, num_classes)
    biases = flat[feature_dim * num_classes :]
    return ModelParams(weights=weights.astype(np.float64), biases=biases.astype(np.float64))
