"""Experiment runner: builds a synthetic device fleet, drives jobs round by
round, and records metrics.

The same device-side round logic runs against two interchangeable server
handles: one calling the job store in process, one speaking HTTP to a running
server. Model histories and metrics are identical across the two, because
every source of randomness is derived from the experiment seed and wall-clock
timing never feeds back into training.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    LabeledBatch,
    ModelParams,
    TrainConfig,
    derive_seed,
    extract_features,
    make_extractor,
)
from .data import Dataset, PartitionSpec, generate_synthetic, partition
from .device import (
    AppContribution,
    DeviceState,
    FeatureColumnsPayload,
    UploadBundle,
    apply_download,
    build_joint_model,
    build_new_problem_model,
    make_upload,
    register_app,
    share_data,
    train_single_app,
)
from .errors import ConfigurationError, ProtocolError, SkipRound
from .jobs import JobConfig, JobStore
from .permissions import MODE_CAPABILITY, PermissionRegistry

try:
    import tomllib  # noqa: F401
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

GROUP_SCOPE = "group"

TIMINGS_COLUMNS = ("round", "seed", "train_ms", "aggregate_ms", "serialize_ms")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment bit-for-bit."""

    scenario: str = "single"
    mode: str | None = None
    apps: tuple[str, ...] = ("alpha",)
    num_devices: int = 10
    rounds: int = 30
    client_fraction: float = 1.0
    seed: int = 0
    num_classes: int = 10
    raw_dim: int = 32
    feature_dim: int = 16
    samples_per_device: int = 250
    test_samples: int = 1000
    skew: float = 0.0
    noise_scale: float = 1.0
    epochs: int = 1
    batch_size: int = 20
    learning_rate: float = 0.003
    dropout_rate: float = 0.0
    timeout_s: float = 60.0
    max_budget_rounds: int = 10_000

    def validate(self) -> None:
        if self.scenario not in ("single", "joint", "new_problem"):
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "joint" and self.mode not in MODE_CAPABILITY:
            raise ConfigurationError("joint experiments need mode data, gradient, or model")
        if self.scenario == "new_problem":
            if self.mode != "data":
                raise ConfigurationError("new-problem experiments run in data mode")
            if len(self.apps) < 2:
                raise ConfigurationError("new-problem experiments need a secondary app")
            if self.feature_dim < len(self.apps):
                raise ConfigurationError("feature_dim must cover one column per app")
        if not self.apps or len(set(self.apps)) != len(self.apps):
            raise ConfigurationError("apps must be non-empty and unique")
        if self.num_devices < 1:
            raise ConfigurationError("num_devices must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigurationError("dropout_rate must be in [0, 1)")
        if self.test_samples < 1:
            raise ConfigurationError("test_samples must be >= 1")

    @property
    def scope_id(self) -> str:
        if self.scenario == "joint":
            return GROUP_SCOPE
        return self.apps[0]

    def grants(self) -> tuple[tuple[str, str, str], ...]:
        if self.scenario == "joint":
            capability = MODE_CAPABILITY[self.mode]
            return tuple((app, GROUP_SCOPE, capability) for app in self.apps)
        if self.scenario == "new_problem":
            return tuple((app, self.apps[0], "ShareData") for app in self.apps[1:])
        return ()

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "apps": list(self.apps),
            "num_devices": self.num_devices,
            "rounds": self.rounds,
            "client_fraction": self.client_fraction,
            "seed": self.seed,
            "num_classes": self.num_classes,
            "raw_dim": self.raw_dim,
            "feature_dim": self.feature_dim,
            "samples_per_device": self.samples_per_device,
            "test_samples": self.test_samples,
            "skew": self.skew,
            "noise_scale": self.noise_scale,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "dropout_rate": self.dropout_rate,
            "timeout_s": self.timeout_s,
            "max_budget_rounds": self.max_budget_rounds,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f: raw[f] for f in cls.__dataclass_fields__ if f in raw}
        if "apps" in known:
            known["apps"] = tuple(str(a) for a in known["apps"])
        config = cls(**known)
        config.validate()
        return config


def load_experiment_config(path: str) -> ExperimentConfig:
    try:
        if path.endswith(".toml"):
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        elif path.endswith(".json"):
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        else:
            raise ConfigurationError(f"experiment config must be .toml or .json: {path!r}")
    except OSError as exc:
        raise ConfigurationError(f"cannot read experiment config {path!r}: {exc}") from exc
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot parse experiment config {path!r}: {exc}") from exc
    try:
        return ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigurationError(f"malformed experiment config: {exc}") from exc


# --- world construction ---------------------------------------------------------


@dataclass
class SimDevice:
    state: DeviceState
    # new-problem scenarios: app -> keyed feature columns it can contribute
    columns: dict = field(default_factory=dict)


@dataclass
class World:
    devices: dict
    test_batch: LabeledBatch
    job_config: JobConfig


def _column_blocks(feature_dim: int, num_apps: int) -> list[slice]:
    base = feature_dim // num_apps
    extra = feature_dim % num_apps
    blocks, start = [], 0
    for i in range(num_apps):
        width = base + (1 if i < extra else 0)
        blocks.append(slice(start, start + width))
        start += width
    return blocks


def build_world(config: ExperimentConfig) -> World:
    """Deterministic fleet: one synthetic dataset, split into a held-out test
    set and per-app device shards; features go through a frozen extractor."""
    config.validate()
    num_apps = len(config.apps)
    shard_apps = 1 if config.scenario == "new_problem" else num_apps
    train_needed = config.num_devices * config.samples_per_device * shard_apps
    total = train_needed + config.test_samples
    samples_per_class = -(-total // config.num_classes)

    raw = generate_synthetic(
        num_classes=config.num_classes,
        raw_dim=config.raw_dim,
        samples_per_class=samples_per_class,
        noise_scale=config.noise_scale,
        seed=config.seed,
    )
    order = np.random.default_rng(derive_seed(config.seed, "split")).permutation(len(raw))
    test_idx, train_idx = order[: config.test_samples], order[config.test_samples :]

    extractor = make_extractor(
        config.raw_dim, config.feature_dim, derive_seed(config.seed, "extractor")
    )
    features = extract_features(extractor, raw.raw_inputs)
    labels = raw.labels

    test_batch = LabeledBatch(features=features[test_idx], labels=labels[test_idx])
    train = Dataset(
        raw_inputs=raw.raw_inputs[train_idx],
        labels=labels[train_idx],
        num_classes=config.num_classes,
        seed=config.seed,
    )
    train_features = features[train_idx]

    spec = PartitionSpec(
        sizes=tuple([config.samples_per_device] * (config.num_devices * shard_apps)),
        skew=config.skew,
        seed=derive_seed(config.seed, "partition"),
    )
    shards = partition(train, spec)

    blocks = _column_blocks(config.feature_dim, num_apps)
    devices: dict[int, SimDevice] = {}
    for d in range(config.num_devices):
        state = DeviceState(device_id=d)
        sim = SimDevice(state=state)
        if config.scenario == "new_problem":
            idx = shards[d]
            keys = train_idx[idx]
            primary_batch = LabeledBatch(
                features=train_features[idx][:, blocks[0]], labels=train.labels[idx]
            )
            register_app(state, config.apps[0], primary_batch, keys=keys)
            for a, app in enumerate(config.apps[1:], start=1):
                register_app(state, app, None)
                sim.columns[app] = FeatureColumnsPayload(
                    keys=keys, features=train_features[idx][:, blocks[a]]
                )
        else:
            for a, app in enumerate(config.apps):
                idx = shards[d * num_apps + a]
                batch = LabeledBatch(
                    features=train_features[idx], labels=train.labels[idx]
                )
                register_app(state, app, batch)
        devices[d] = sim

    if config.scenario == "joint":
        job_members = tuple(config.apps)
    elif config.scenario == "new_problem":
        job_members = tuple(config.apps[1:])
    else:
        job_members = ()
    job_config = JobConfig(
        scenario=config.scenario,
        scope_id=config.scope_id,
        members=job_members,
        mode=config.mode,
        feature_dim=config.feature_dim,
        num_classes=config.num_classes,
        rounds=config.rounds,
        seed=config.seed,
        client_fraction=config.client_fraction,
        timeout_s=config.timeout_s,
        max_budget_rounds=config.max_budget_rounds,
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        grants=config.grants(),
        eval_features=test_batch.features,
        eval_labels=test_batch.labels,
    )
    return World(devices=devices, test_batch=test_batch, job_config=job_config)


def device_drops_out(seed: int, round_index: int, device_id: int, rate: float) -> bool:
    """Deterministic straggler draw, identical on every transport."""
    if rate <= 0.0:
        return False
    rng = np.random.default_rng(derive_seed(seed, "dropout", round_index, device_id))
    return bool(rng.random() < rate)


def run_device_round(
    sim: SimDevice,
    selection_info: dict,
    downloads: list[tuple[str, ModelParams]],
) -> UploadBundle:
    """One device's work for one round: refresh the grant mirror, install the
    distributed models, train per the job scenario, and package the upload."""
    round_index = int(selection_info["round"])
    registry = PermissionRegistry.from_dict(selection_info["registry"])
    sim.state.begin_round(round_index, permissions=registry)
    apply_download(sim.state, downloads)
    train = selection_info["train"]
    config = TrainConfig(
        epochs=int(train["epochs"]),
        batch_size=int(train["batch_size"]),
        learning_rate=float(train["learning_rate"]),
        seed=int(train["seed"]),
    )
    scenario = selection_info["scenario"]
    scope_id = selection_info["scope_id"]
    global_model = dict(downloads)[scope_id]

    if scenario == "single":
        train_single_app(sim.state, scope_id, global_model, config)
    elif scenario == "joint":
        mode = selection_info["mode"]
        members = [str(m) for m in selection_info["members"]]
        if mode == "data":
            for member in members:
                shard = sim.state.shards.get(member)
                if shard is not None and len(shard) > 0:
                    share_data(sim.state, member, scope_id, shard)
        build_joint_model(sim.state, scope_id, mode, global_model, config)
    else:  # new_problem
        contribs = [
            AppContribution(app=app, payload=payload)
            for app, payload in sorted(sim.columns.items())
        ]
        build_new_problem_model(sim.state, scope_id, contribs, "data", global_model, config)
    return make_upload(sim.state, round_index)


# --- server handles --------------------------------------------------------------


class InProcessHandle:
    """Drives a JobStore directly; the driver closes rounds explicitly."""

    def __init__(self, store: JobStore, device_ids: list[int]):
        self.store = store
        self.device_ids = list(device_ids)

    def create_job(self, config: JobConfig) -> str:
        return self.store.create_job(config).job_id

    def selection(self, job_id: str, round_index: int) -> dict:
        state = self.store.select_clients(job_id, round_index, self.device_ids)
        job = self.store.get(job_id)
        with job.lock:
            return {
                "round": round_index,
                "selection": list(state.selection),
                "status": state.status,
                "job_status": job.status,
                "registry": job.permissions.to_dict(),
                "train": {
                    "epochs": job.config.epochs,
                    "batch_size": job.config.batch_size,
                    "learning_rate": job.config.learning_rate,
                    "seed": job.config.seed,
                },
                "scenario": job.config.scenario,
                "scope_id": job.config.scope_id,
                "mode": job.config.mode,
                "members": list(job.config.members),
            }

    def submit(self, job_id: str, round_index: int, wire: dict) -> None:
        bundle = UploadBundle.from_wire(wire)
        self.store.submit_update(
            job_id,
            round_index,
            bundle.device_id,
            [(e.scope, e.params, e.sample_count) for e in bundle.entries],
        )

    def finish_round(self, job_id: str, round_index: int) -> str:
        return self.store.close_round(job_id, round_index).status

    def get_model(self, job_id: str, scope: str, round_index: int | None) -> ModelParams:
        return self.store.get_global_model(job_id, scope, round_index)[2]

    def metrics_csv(self, job_id: str) -> str:
        return self.store.metrics_csv(job_id)

    def metrics_rows(self, job_id: str) -> list[dict]:
        return self.store.metrics_rows(job_id)

    def job_status(self, job_id: str) -> str:
        return self.store.get(job_id).status

    def terminate(self, job_id: str) -> None:
        self.store.terminate_job(job_id)


class HttpHandle:
    """Same protocol over HTTP. Needs a customer token plus one device token
    per simulated device; posts each upload under its device's token."""

    def __init__(self, base_url: str, customer_token: str, device_tokens: dict):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.customer_token = customer_token
        self.device_tokens = {int(k): str(v) for k, v in device_tokens.items()}
        self._client = httpx.Client(base_url=self.base_url, timeout=30.0)

    def close(self) -> None:
        self._client.close()

    def _headers(self, token: str) -> dict:
        return {"Authorization": f"Bearer {token}"}

    def _check(self, response) -> dict:
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise ProtocolError(f"server returned {response.status_code}: {detail}")
        return response.json()

    def create_job(self, config: JobConfig) -> str:
        body = self._check(
            self._client.post(
                "/api/v1/jobs", json=config.to_dict(), headers=self._headers(self.customer_token)
            )
        )
        return body["job_id"]

    def selection(self, job_id: str, round_index: int) -> dict:
        body = self._check(
            self._client.get(
                f"/api/v1/jobs/{job_id}/rounds/{round_index}/selection",
                headers=self._headers(self.customer_token),
            )
        )
        return body

    def submit(self, job_id: str, round_index: int, wire: dict) -> None:
        token = self.device_tokens[int(wire["device_id"])]
        self._check(
            self._client.post(
                f"/api/v1/jobs/{job_id}/rounds/{round_index}/updates",
                json=wire,
                headers=self._headers(token),
            )
        )

    def finish_round(self, job_id: str, round_index: int, poll_s: float = 0.05) -> str:
        """Wait for the server to close the round (all reported, or timeout)."""
        deadline = time.time() + 300.0
        while time.time() < deadline:
            info = self.selection(job_id, round_index)
            if info["status"] != "Open":
                return info["status"]
            time.sleep(poll_s)
        raise ProtocolError(f"round {round_index} did not close within 300s")

    def get_model(self, job_id: str, scope: str, round_index: int | None) -> ModelParams:
        from .api import decode_model_response

        params = {"scope": scope}
        if round_index is not None:
            params["round"] = round_index
        body = self._check(
            self._client.get(
                f"/api/v1/jobs/{job_id}/model",
                params=params,
                headers=self._headers(self.customer_token),
            )
        )
        return decode_model_response(body)

    def metrics_csv(self, job_id: str) -> str:
        response = self._client.get(
            f"/api/v1/jobs/{job_id}/metrics",
            params={"format": "csv"},
            headers=self._headers(self.customer_token),
        )
        if response.status_code >= 400:
            raise ProtocolError(f"server returned {response.status_code}: {response.text}")
        return response.text

    def metrics_rows(self, job_id: str) -> list[dict]:
        body = self._check(
            self._client.get(
                f"/api/v1/jobs/{job_id}/metrics", headers=self._headers(self.customer_token)
            )
        )
        return body["rows"]

    def job_status(self, job_id: str) -> str:
        info = self._check(
            self._client.get(
                f"/api/v1/jobs/{job_id}/metrics", headers=self._headers(self.customer_token)
            )
        )
        return info["status"]

    def terminate(self, job_id: str) -> None:
        self._check(
            self._client.delete(
                f"/api/v1/jobs/{job_id}", headers=self._headers(self.customer_token)
            )
        )


# --- experiment driver ------------------------------------------------------------


@dataclass
class ExperimentResult:
    job_id: str
    scope: str
    config: ExperimentConfig
    final_accuracy: float | None
    metrics_rows: list
    metrics_csv: str
    history: list[ModelParams]
    timings: list[dict]
    out_dir: str | None


def _write_outputs(out_dir: str, config: ExperimentConfig, result: ExperimentResult) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(result.metrics_csv)
    with open(os.path.join(out_dir, "timings.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMINGS_COLUMNS)
        for row in result.timings:
            writer.writerow([row[c] for c in TIMINGS_COLUMNS])


def run_experiment(
    config: ExperimentConfig,
    handle=None,
    out_dir: str | None = None,
    workers: int = 1,
    job_id: str | None = None,
    stop_after_round: int | None = None,
) -> ExperimentResult:
    """Run one job to completion and collect its model history and metrics.

    Device work within a round is order-independent (the server aggregates in
    ascending device id), so `workers` > 1 changes wall time only. Passing an
    existing `job_id` resumes that job where its durable state left off; the
    fleet is rebuilt deterministically from the config. `stop_after_round`
    abandons the driver mid-job, as a crashed orchestrator would."""
    config.validate()
    world = build_world(config)
    own_handle = handle is None
    if own_handle:
        handle = InProcessHandle(JobStore(), sorted(world.devices))
    if job_id is None:
        job_id = handle.create_job(world.job_config)
    timings: list[dict] = []

    effective = world.job_config.effective_rounds
    for round_index in range(1, effective + 1):
        info = handle.selection(job_id, round_index)
        if info["status"] != "Open":
            continue  # server restart can leave an already-closed current round
        active = [
            d
            for d in info["selection"]
            if not device_drops_out(config.seed, round_index, d, config.dropout_rate)
        ]
        downloads_needed = sorted({config.scope_id})
        models = {
            scope: handle.get_model(job_id, scope, round_index - 1)
            for scope in downloads_needed
        }
        downloads = [(scope, models[scope]) for scope in downloads_needed]

        t0 = time.perf_counter()

        def one_device(device_id: int):
            try:
                return run_device_round(world.devices[device_id], info, downloads)
            except SkipRound:
                return None

        if workers > 1 and len(active) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                bundles = list(pool.map(one_device, active))
        else:
            bundles = [one_device(d) for d in active]
        t1 = time.perf_counter()
        wires = [b.to_wire() for b in bundles if b is not None]
        t2 = time.perf_counter()
        for wire in wires:
            handle.submit(job_id, round_index, wire)
        handle.finish_round(job_id, round_index)
        t3 = time.perf_counter()
        timings.append(
            {
                "round": round_index,
                "seed": config.seed,
                "train_ms": round((t1 - t0) * 1e3, 3),
                "serialize_ms": round((t2 - t1) * 1e3, 3),
                "aggregate_ms": round((t3 - t2) * 1e3, 3),
            }
        )
        if stop_after_round is not None and round_index >= stop_after_round:
            break

    rows = handle.metrics_rows(job_id)
    csv_text = handle.metrics_csv(job_id)
    scope = world.job_config.scope_id
    last_round = max((row["round"] for row in rows), default=0)
    history = [handle.get_model(job_id, scope, r) for r in range(last_round + 1)]
    final_accuracy = None
    for row in rows:
        if row["scope"] == scope and row["accuracy"] is not None:
            final_accuracy = float(row["accuracy"])
    result = ExperimentResult(
        job_id=job_id,
        scope=scope,
        config=config,
        final_accuracy=final_accuracy,
        metrics_rows=rows,
        metrics_csv=csv_text,
        history=history,
        timings=timings,
        out_dir=out_dir,
    )
    if out_dir is not None:
        _write_outputs(out_dir, config, result)
    return result


def compare_scenarios(
    base: ExperimentConfig,
    joint_mode: str = "data",
    repeats: int = 3,
    out_dir: str | None = None,
) -> dict:
    """Paired comparison of single-app vs joint training over shared seeds.

    Each repeat runs both scenarios on the same derived seed so the fleets and
    data are identical; the summary reports per-seed final accuracies and the
    mean improvement of joint over single."""
    if repeats < 3:
        raise ConfigurationError("comparisons need at least 3 repeats")
    if len(base.apps) < 2:
        raise ConfigurationError("comparisons need at least two apps")
    rows = []
    for i in range(repeats):
        seed = derive_seed(base.seed, "repeat", i)
        single_cfg = replace(base, scenario="single", mode=None, seed=seed)
        joint_cfg = replace(base, scenario="joint", mode=joint_mode, seed=seed)
        single = run_experiment(single_cfg)
        joint = run_experiment(joint_cfg)
        rows.append(
            {
                "seed": seed,
                "single_accuracy": single.final_accuracy,
                "joint_accuracy": joint.final_accuracy,
                "delta": joint.final_accuracy - single.final_accuracy,
            }
        )
    deltas = [r["delta"] for r in rows]
    summary = {
        "repeats": repeats,
        "joint_mode": joint_mode,
        "rows": rows,
        "mean_single": float(np.mean([r["single_accuracy"] for r in rows])),
        "mean_joint": float(np.mean([r["joint_accuracy"] for r in rows])),
        "mean_delta": float(np.mean(deltas)),
        "min_delta": float(np.min(deltas)),
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "comparison.csv"), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "single_accuracy", "joint_accuracy", "delta"])
            for r in rows:
                writer.writerow([r["seed"], r["single_accuracy"], r["joint_accuracy"], r["delta"]])
        with open(os.path.join(out_dir, "comparison.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
    return summary
