"""Federated learning as a service: cross-app on-device training, a round
server, and a reproducible experiment harness."""

from .core import (
    FeatureExtractor,
    GradientVector,
    LabeledBatch,
    ModelParams,
    TrainConfig,
    aggregate_gradients,
    derive_seed,
    evaluate,
    extract_features,
    federated_aggregate,
    from_bytes,
    gradient,
    init_model,
    local_train,
    loss,
    make_extractor,
    predict,
    sgd_step,
    to_bytes,
)
from .data import Dataset, PartitionSpec, generate_synthetic, partition
from .errors import (
    ConfigurationError,
    ContractError,
    FlaasError,
    NotFoundError,
    PermissionDenied,
    ProtocolError,
    RegistryError,
    SkipRound,
)
from .permissions import CAPABILITIES, MODE_CAPABILITY, PermissionGrant, PermissionRegistry

__version__ = "0.1.0"

__all__ = [
    "CAPABILITIES",
    "ConfigurationError",
    "ContractError",
    "Dataset",
    "FeatureExtractor",
    "FlaasError",
    "GradientVector",
    "LabeledBatch",
    "MODE_CAPABILITY",
    "ModelParams",
    "NotFoundError",
    "PartitionSpec",
    "PermissionDenied",
    "PermissionGrant",
    "PermissionRegistry",
    "ProtocolError",
    "RegistryError",
    "SkipRound",
    "TrainConfig",
    "aggregate_gradients",
    "derive_seed",
    "evaluate",
    "extract_features",
    "federated_aggregate",
    "from_bytes",
    "generate_synthetic",
    "gradient",
    "init_model",
    "local_train",
    "loss",
    "make_extractor",
    "partition",
    "predict",
    "sgd_step",
    "to_bytes",
]
