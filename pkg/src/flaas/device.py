"""Per-device module: hosts apps, runs the three joint-training modes, and
packages round uploads.

A device owns its apps' private shards. Data moves between apps only through
permission-checked sharing calls, and only model parameters plus sample
counts ever leave the device. Each DeviceState is single-owner: all mutations
happen on one logical executor; distinct devices run fully in parallel.
"""

from __future__ import annotations

import base64
import zlib
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GradientVector,
    LabeledBatch,
    ModelParams,
    TrainConfig,
    aggregate_gradients,
    derive_seed,
    federated_aggregate,
    from_bytes,
    gradient,
    iter_batches,
    local_train,
    predict,
    to_bytes,
)
from .errors import (
    ContractError,
    PermissionDenied,
    ProtocolError,
    RegistryError,
    SkipRound,
)
from .permissions import MODE_CAPABILITY, PermissionRegistry

JOINT_MODES = ("data", "gradient", "model")


def device_round_seed(config_seed: int, device_id: int, round_index: int) -> int:
    """Shuffle seed for everything a device trains within one round."""
    return derive_seed(config_seed, "device-train", device_id, round_index)


# --- app contributions --------------------------------------------------------


@dataclass(frozen=True)
class DataPayload:
    """Labeled samples, optionally keyed for cross-app joins."""

    batch: LabeledBatch
    keys: np.ndarray | None = None

    def __post_init__(self):
        if self.keys is not None:
            keys = np.asarray(self.keys, dtype=np.int64).reshape(-1)
            if len(keys) != len(self.batch):
                raise ContractError("keys must align with the batch")
            object.__setattr__(self, "keys", keys)


@dataclass(frozen=True)
class FeatureColumnsPayload:
    """Unlabeled auxiliary feature columns from a secondary app, keyed per sample."""

    keys: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.int64).reshape(-1)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if len(keys) != len(feats) or len(keys) < 1:
            raise ContractError("keys and feature rows must have equal length >= 1")
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class GradientPayload:
    grad: GradientVector


@dataclass(frozen=True)
class ModelPayload:
    params: ModelParams
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ContractError("sample_count must be >= 1")


@dataclass(frozen=True)
class AppContribution:
    app: str
    payload: DataPayload | FeatureColumnsPayload | GradientPayload | ModelPayload


# --- upload bundle ------------------------------------------------------------


@dataclass(frozen=True)
class UploadEntry:
    scope: str
    params: ModelParams
    sample_count: int


@dataclass(frozen=True)
class UploadBundle:
    device_id: int
    round_index: int
    entries: tuple[UploadEntry, ...]
    compressed: bool = False

    def to_wire(self) -> dict:
        entries = []
        for entry in self.entries:
            raw = to_bytes(entry.params)
            if self.compressed:
                raw = zlib.compress(raw)
            entries.append(
                {
                    "scope": entry.scope,
                    "n": entry.sample_count,
                    "payload_b64": base64.b64encode(raw).decode("ascii"),
                    "compressed": self.compressed,
                }
            )
        return {"device_id": self.device_id, "round": self.round_index, "entries": entries}

    @classmethod
    def from_wire(cls, raw: dict) -> "UploadBundle":
        try:
            entries = []
            compressed = False
            for item in raw["entries"]:
                blob = base64.b64decode(item["payload_b64"])
                if item.get("compressed", False):
                    blob = zlib.decompress(blob)
                    compressed = True
                entries.append(
                    UploadEntry(
                        scope=str(item["scope"]),
                        params=from_bytes(blob),
                        sample_count=int(item["n"]),
                    )
                )
            return cls(
                device_id=int(raw["device_id"]),
                round_index=int(raw["round"]),
                entries=tuple(entries),
                compressed=compressed,
            )
        except (KeyError, TypeError, ValueError, zlib.error) as exc:
            raise ContractError(f"malformed upload bundle: {exc}") from exc


# --- soft-voting ensemble -----------------------------------------------------


@dataclass(frozen=True)
class SoftVotingEnsemble:
    """Meta-model over member heads: probabilities are the sample-count-weighted
    average of member predictions. Satisfies the same predict contract as a
    single head."""

    members: tuple[tuple[ModelParams, int], ...]

    def __post_init__(self):
        if not self.members:
            raise ContractError("ensemble needs at least one member")
        dims = {(m.feature_dim, m.num_classes) for m, _ in self.members}
        if len(dims) != 1:
            raise ContractError("ensemble members must share dimensions")

    @property
    def total_count(self) -> int:
        return sum(n for _, n in self.members)

    def predict(self, features: np.ndarray) -> np.ndarray:
        total = self.total_count
        anchor = predict(self.members[0][0], features)
        acc = np.zeros_like(anchor)
        for params, count in self.members:
            acc += (count / total) * (predict(params, features) - anchor)
        return anchor + acc

    def evaluate(self, test_set: LabeledBatch) -> float:
        predicted = np.argmax(self.predict(test_set.features), axis=-1)
        return float(np.mean(predicted == test_set.labels))


# --- device state and operations ----------------------------------------------


@dataclass
class DeviceState:
    """One simulated device: registered apps, their shards, cached models, pools."""

    device_id: int
    permissions: PermissionRegistry = field(default_factory=PermissionRegistry)
    round_index: int = 0
    shards: dict = field(default_factory=dict)  # app -> LabeledBatch | None
    shard_keys: dict = field(default_factory=dict)  # app -> np.ndarray | None
    app_models: dict = field(default_factory=dict)  # app -> ModelParams
    scope_models: dict = field(default_factory=dict)  # scope -> ModelParams
    pools: dict = field(default_factory=dict)  # scope -> list[LabeledBatch]
    staged: dict = field(default_factory=dict)  # scope -> (ModelParams, n)

    def begin_round(self, round_index: int, permissions: PermissionRegistry | None = None):
        """Start a round: reset share pools and staged results; refresh the
        permission mirror the server distributed."""
        self.round_index = round_index
        self.pools = {}
        self.staged = {}
        if permissions is not None:
            self.permissions = permissions

    def train_seed(self, config: TrainConfig) -> int:
        return device_round_seed(config.seed, self.device_id, self.round_index)

    def _local_config(self, config: TrainConfig) -> TrainConfig:
        return TrainConfig(
            epochs=config.epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            seed=self.train_seed(config),
        )

    def shard_of(self, app_id: str) -> LabeledBatch:
        if app_id not in self.shards:
            raise RegistryError(f"app {app_id!r} not registered on device {self.device_id}")
        shard = self.shards[app_id]
        if shard is None:
            raise SkipRound(f"app {app_id!r} has no data on device {self.device_id}")
        return shard


def register_app(
    device: DeviceState,
    app_id: str,
    shard: LabeledBatch | None,
    keys: np.ndarray | None = None,
) -> None:
    """Attach an app with its private shard; re-registration is an error."""
    if app_id in device.shards:
        raise RegistryError(f"app {app_id!r} already registered on device {device.device_id}")
    if keys is not None:
        keys = np.asarray(keys, dtype=np.int64).reshape(-1)
        if shard is None or len(keys) != len(shard):
            raise ContractError("keys must align with the shard")
    device.shards[app_id] = shard
    device.shard_keys[app_id] = keys
    device.permissions.register_app(app_id)


def share_data(
    device: DeviceState, src_app: str, dst: str, samples: LabeledBatch
) -> None:
    """Move samples into dst's joint pool for this round, if and only if a
    ShareData grant allows it. Originals stay with the source app."""
    if src_app not in device.shards:
        raise RegistryError(f"app {src_app!r} not registered")
    if not device.permissions.check(src_app, dst, "ShareData"):
        raise PermissionDenied(f"{src_app} -> {dst}: ShareData not granted")
    device.pools.setdefault(dst, []).append(samples)


def train_single_app(
    device: DeviceState,
    app_id: str,
    global_model: ModelParams,
    config: TrainConfig,
) -> tuple[ModelParams, int]:
    """Train an app's own model from the distributed global parameters."""
    shard = device.shard_of(app_id)
    trained = local_train(global_model, shard, device._local_config(config))
    device.staged[app_id] = (trained, len(shard))
    return trained, len(shard)


def _pooled(device: DeviceState, scope: str) -> LabeledBatch:
    batches = device.pools.get(scope, [])
    if not batches:
        raise SkipRound(f"no samples shared into {scope!r} this round")
    return LabeledBatch(
        features=np.concatenate([b.features for b in batches]),
        labels=np.concatenate([b.labels for b in batches]),
    )


def _member_shards(device: DeviceState, members: list[str]) -> list[tuple[str, LabeledBatch]]:
    out = []
    for member in members:
        if member not in device.shards:
            raise RegistryError(f"group member {member!r} not registered on device")
        shard = device.shards[member]
        if shard is not None and len(shard) > 0:
            out.append((member, shard))
    if not out:
        raise SkipRound("no group member has data on this device")
    return out


def _batch_stream(shard: LabeledBatch, batch_size: int, seed: int):
    """Endless mini-batch stream: shuffle, emit, reshuffle when exhausted."""
    rng = np.random.default_rng(seed)
    while True:
        for idx in iter_batches(len(shard), batch_size, rng):
            yield LabeledBatch(features=shard.features[idx], labels=shard.labels[idx])


def build_joint_model(
    device: DeviceState,
    group_id: str,
    mode: str,
    global_model: ModelParams,
    config: TrainConfig,
) -> tuple[ModelParams, int]:
    """Build one shared model for a group of apps on this device.

    data:     train on the round's pooled shared samples.
    gradient: lock-step loop; every member reports the gradient of its own
              shard's next mini-batch at the current joint model, the joint
              model absorbs the shard-size-weighted average, and the improved
              model is released back before the next iteration.
    model:    members train separately for E epochs; federated aggregation
              merges the member models, weighted by shard sizes.
    """
    if mode not in JOINT_MODES:
        raise ContractError(f"unknown joint mode {mode!r}")
    group = device.permissions.group(group_id)
    if group is None:
        raise RegistryError(f"unknown group {group_id!r}")
    missing = device.permissions.missing_for_group_mode(group_id, mode)
    if missing:
        raise PermissionDenied(f"missing grants for {mode}-mode group job: {missing}")
    members = sorted(group.members)
    local_cfg = device._local_config(config)

    if mode == "data":
        pool = _pooled(device, group_id)
        joint = local_train(global_model, pool, local_cfg)
        count = len(pool)
    elif mode == "gradient":
        shards = _member_shards(device, members)
        count = sum(len(s) for _, s in shards)
        streams = [
            (_batch_stream(shard, local_cfg.batch_size, local_cfg.seed), len(shard))
            for _, shard in shards
        ]
        steps_per_epoch = -(-count // local_cfg.batch_size)
        joint = global_model
        for _ in range(local_cfg.epochs * steps_per_epoch):
            reports = [(gradient(joint, next(stream)), size) for stream, size in streams]
            joint = aggregate_gradients(joint, reports, local_cfg.learning_rate)
    else:  # model
        shards = _member_shards(device, members)
        trained = [
            (local_train(global_model, shard, local_cfg), len(shard))
            for _, shard in shards
        ]
        joint = federated_aggregate(trained)
        count = sum(n for _, n in trained)

    device.staged[group_id] = (joint, count)
    return joint, count


def _join_columns(
    primary_batch: LabeledBatch,
    primary_keys: np.ndarray,
    columns: list[FeatureColumnsPayload],
) -> LabeledBatch | None:
    """Inner-join secondary feature columns onto the primary's samples by key;
    unmatched rows are dropped. None when nothing matches."""
    keep = np.ones(len(primary_batch), dtype=bool)
    lookups = []
    for col in columns:
        position = {int(k): i for i, k in enumerate(col.keys)}
        lookups.append(position)
        keep &= np.array([int(k) in position for k in primary_keys])
    if not keep.any():
        return None
    kept_keys = primary_keys[keep]
    blocks = [primary_batch.features[keep]]
    for col, position in zip(columns, lookups):
        rows = np.array([position[int(k)] for k in kept_keys])
        blocks.append(col.features[rows])
    return LabeledBatch(
        features=np.concatenate(blocks, axis=1), labels=primary_batch.labels[keep]
    )


def build_new_problem_model(
    device: DeviceState,
    primary_app: str,
    secondary_contribs: list[AppContribution],
    mode: str,
    global_model: ModelParams,
    config: TrainConfig,
) -> tuple[ModelParams | SoftVotingEnsemble, int]:
    """Solve a new problem owned by `primary_app` with help from secondaries.

    data:  secondaries contribute keyed feature columns, joined onto the
           primary's labeled samples to form an augmented feature space; the
           result is an ordinary trained head over the joined space (staged
           for upload under the primary's scope).
    model: secondaries contribute partial models; the result is a soft-voting
           ensemble over the primary's own head and the contributed ones,
           weighted by sample counts (device-local, not staged).
    """
    if mode not in ("data", "model"):
        raise ContractError(f"new-problem mode must be data or model, got {mode!r}")
    shard = device.shard_of(primary_app)
    local_cfg = device._local_config(config)

    if mode == "data":
        columns = []
        for contrib in secondary_contribs:
            if not isinstance(contrib.payload, FeatureColumnsPayload):
                raise ContractError(
                    f"data-mode secondary {contrib.app!r} must contribute feature columns"
                )
            if not device.permissions.check(contrib.app, primary_app, "ShareData"):
                raise PermissionDenied(
                    f"{contrib.app} -> {primary_app}: ShareData not granted"
                )
            columns.append(contrib.payload)
        if not columns:
            return train_single_app(device, primary_app, global_model, config)
        keys = device.shard_keys.get(primary_app)
        if keys is None:
            raise ContractError(f"primary app {primary_app!r} has no sample keys to join on")
        joined = _join_columns(shard, keys, columns)
        if joined is None:
            raise SkipRound("key join produced zero matched samples")
        trained = local_train(global_model, joined, local_cfg)
        device.staged[primary_app] = (trained, len(joined))
        return trained, len(joined)

    members: list[tuple[ModelParams, int]] = [
        (local_train(global_model, shard, local_cfg), len(shard))
    ]
    for contrib in secondary_contribs:
        if not isinstance(contrib.payload, ModelPayload):
            raise ContractError(
                f"model-mode secondary {contrib.app!r} must contribute a model"
            )
        if not device.permissions.check(contrib.app, primary_app, "ShareModel"):
            raise PermissionDenied(f"{contrib.app} -> {primary_app}: ShareModel not granted")
        members.append((contrib.payload.params, contrib.payload.sample_count))
    ensemble = SoftVotingEnsemble(members=tuple(members))
    return ensemble, ensemble.total_count


def make_upload(device: DeviceState, round_index: int, compress: bool = False) -> UploadBundle:
    """Bundle every model trained this round; parameters and counts only."""
    if round_index != device.round_index:
        raise ProtocolError(
            f"device is in round {device.round_index}, cannot package round {round_index}"
        )
    if not device.staged:
        raise SkipRound("nothing trained this round")
    entries = tuple(
        UploadEntry(scope=scope, params=params, sample_count=n)
        for scope, (params, n) in sorted(device.staged.items())
    )
    return UploadBundle(
        device_id=device.device_id,
        round_index=round_index,
        entries=entries,
        compressed=compress,
    )


def apply_download(device: DeviceState, models: list[tuple[str, ModelParams]]) -> None:
    """Install per-scope global models; group scopes fan out to every member.

    All-or-nothing: any unknown scope fails the whole call before any app's
    model is touched."""
    resolved: list[tuple[str, list[str], ModelParams]] = []
    for scope, params in models:
        group = device.permissions.group(scope)
        if group is not None:
            resolved.append((scope, sorted(group.members), params))
        elif scope in device.shards:
            resolved.append((scope, [scope], params))
        else:
            raise ProtocolError(f"unknown scope {scope!r} on device {device.device_id}")
    for scope, apps, params in resolved:
        device.scope_models[scope] = params
        for app in apps:
            device.app_models[app] = params
