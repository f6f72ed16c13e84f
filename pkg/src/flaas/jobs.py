"""Server-side job engine: job configuration, round lifecycle, client
selection, update collection, aggregation, metrics, and durable state.

A job trains one model stream (scope) over numbered rounds. Round r trains
from model r-1; model 0 is derived from the job seed. Rounds close when every
selected device has reported or the round times out; whatever arrived by then
is aggregated in ascending device-id order. Closed rounds are persisted with
both the raw logged updates and the aggregated result, so a restarted server
resumes bit-exactly.
"""

from __future__ import annotations

import base64
import csv
import io
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    LabeledBatch,
    ModelParams,
    derive_seed,
    evaluate,
    federated_aggregate,
    from_bytes,
    init_model,
    to_bytes,
)
from .errors import ConfigurationError, NotFoundError, PermissionDenied, ProtocolError
from .permissions import CAPABILITIES, MODE_CAPABILITY, Group, PermissionRegistry

SCENARIOS = ("single", "joint", "new_problem")

METRICS_COLUMNS = ("round", "scope", "seed", "accuracy", "n_updates", "status")


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "b64": base64.b64encode(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).decode(
            "ascii"
        ),
        "shape": list(arr.shape),
    }


def _decode_array(raw: dict) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(raw["b64"]), dtype=np.float64)
    return flat.reshape(raw["shape"]).copy()


@dataclass(frozen=True)
class JobConfig:
    """Complete description of a training job.

    scenario "single" trains one app's model; "joint" trains a group model
    under the given sharing mode; "new_problem" augments a primary app's
    samples with secondaries' feature columns (data mode only: model-mode
    meta-models are ensembles that never leave the device).
    """

    scenario: str
    scope_id: str
    feature_dim: int
    num_classes: int
    rounds: int
    seed: int
    members: tuple[str, ...] = ()
    mode: str | None = None
    client_fraction: float = 1.0
    timeout_s: float = 60.0
    max_budget_rounds: int = 10_000
    epochs: int = 1
    batch_size: int = 20
    learning_rate: float = 0.003
    grants: tuple[tuple[str, str, str], ...] = ()
    eval_features: np.ndarray | None = None
    eval_labels: np.ndarray | None = None
    configure_only: bool = False
    self_tuning: bool = False
    epsilon: float | None = None

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.self_tuning:
            raise ConfigurationError("self-tuning jobs are unsupported")
        if not self.scope_id:
            raise ConfigurationError("scope_id must be non-empty")
        if self.feature_dim < 1 or self.num_classes < 2:
            raise ConfigurationError("model dimensions out of range")
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        if not (0.0 < self.client_fraction <= 1.0):
            raise ConfigurationError("client_fraction must be in (0, 1]")
        if self.timeout_s <= 0:
            raise ConfigurationError("timeout_s must be positive")
        if self.max_budget_rounds < 1:
            raise ConfigurationError("max_budget_rounds must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epsilon is not None and self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0 when given")
        if self.scenario == "single":
            if self.mode is not None or self.members:
                raise ConfigurationError("single-app jobs take no mode or members")
        elif self.scenario == "joint":
            if self.mode not in MODE_CAPABILITY:
                raise ConfigurationError(f"joint jobs need a sharing mode, got {self.mode!r}")
            if not self.members:
                raise ConfigurationError("joint jobs need at least one group member")
        else:  # new_problem
            if self.mode == "model":
                raise ConfigurationError(
                    "new-problem model sharing builds a device-local ensemble; "
                    "server jobs support data mode only"
                )
            if self.mode != "data":
                raise ConfigurationError(
                    f"new-problem jobs support data mode only, got {self.mode!r}"
                )
            if not self.members:
                raise ConfigurationError("new-problem jobs need at least one secondary app")
        for grant in self.grants:
            if len(grant) != 3 or grant[2] not in CAPABILITIES:
                raise ConfigurationError(f"malformed grant {grant!r}")
        if (self.eval_features is None) != (self.eval_labels is None):
            raise ConfigurationError("eval set needs both features and labels")

    @property
    def effective_rounds(self) -> int:
        return min(self.rounds, self.max_budget_rounds)

    def eval_batch(self) -> LabeledBatch | None:
        if self.eval_features is None:
            return None
        return LabeledBatch(features=self.eval_features, labels=self.eval_labels)

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario,
            "scope_id": self.scope_id,
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "rounds": self.rounds,
            "seed": self.seed,
            "members": list(self.members),
            "mode": self.mode,
            "client_fraction": self.client_fraction,
            "timeout_s": self.timeout_s,
            "max_budget_rounds": self.max_budget_rounds,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "grants": [list(g) for g in self.grants],
            "configure_only": self.configure_only,
            "self_tuning": self.self_tuning,
            "epsilon": self.epsilon,
        }
        if self.eval_features is not None:
            out["eval_features"] = _encode_array(self.eval_features)
            out["eval_labels"] = _encode_array(self.eval_labels)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "JobConfig":
        try:
            eval_features = eval_labels = None
            if "eval_features" in raw and raw["eval_features"] is not None:
                eval_features = _decode_array(raw["eval_features"])
                eval_labels = _decode_array(raw["eval_labels"]).astype(np.int64).reshape(-1)
            return cls(
                scenario=str(raw["scenario"]),
                scope_id=str(raw["scope_id"]),
                feature_dim=int(raw["feature_dim"]),
                num_classes=int(raw["num_classes"]),
                rounds=int(raw["rounds"]),
                seed=int(raw["seed"]),
                members=tuple(str(m) for m in raw.get("members", [])),
                mode=raw.get("mode"),
                client_fraction=float(raw.get("client_fraction", 1.0)),
                timeout_s=float(raw.get("timeout_s", 60.0)),
                max_budget_rounds=int(raw.get("max_budget_rounds", 10_000)),
                epochs=int(raw.get("epochs", 1)),
                batch_size=int(raw.get("batch_size", 20)),
                learning_rate=float(raw.get("learning_rate", 0.003)),
                grants=tuple(
                    (str(s), str(t), str(c)) for s, t, c in raw.get("grants", [])
                ),
                eval_features=eval_features,
                eval_labels=eval_labels,
                configure_only=bool(raw.get("configure_only", False)),
                self_tuning=bool(raw.get("self_tuning", False)),
                epsilon=raw.get("epsilon"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed job config: {exc}") from exc


@dataclass
class RoundState:
    index: int
    selection: tuple[int, ...]
    opened_at: float
    # (device_id, scope) -> (params, n); duplicates overwrite (last write wins)
    updates: dict = field(default_factory=dict)
    status: str = "Open"

    @property
    def closed(self) -> bool:
        return self.status != "Open"

    def reported_devices(self) -> set:
        return {device for device, _ in self.updates}


@dataclass
class MetricsRow:
    round_index: int
    scope: str
    seed: int
    accuracy: float | None
    n_updates: int
    status: str

    def as_csv_values(self) -> list:
        acc = "" if self.accuracy is None else repr(self.accuracy)
        return [self.round_index, self.scope, self.seed, acc, self.n_updates, self.status]

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "scope": self.scope,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "n_updates": self.n_updates,
            "status": self.status,
        }


class Job:
    """Mutable runtime state of one job. All access goes through the lock."""

    def __init__(self, job_id: str, config: JobConfig):
        self.job_id = job_id
        self.config = config
        self.lock = threading.RLock()
        self.permissions = self._build_registry(config)
        self.status = "configuring" if config.configure_only else "running"
        self.completed_reason: str | None = None
        # scope -> list of ModelParams, index = round (0 = initial)
        self.models: dict[str, list[ModelParams]] = {
            config.scope_id: [
                init_model(
                    config.feature_dim,
                    config.num_classes,
                    derive_seed(config.seed, "init", config.scope_id),
                )
            ]
        }
        self.rounds: dict[int, RoundState] = {}
        self.current_round = 1
        self.metrics: list[MetricsRow] = []
        if self.status == "running":
            self._check_preconditions(strict=True)

    @staticmethod
    def _build_registry(config: JobConfig) -> PermissionRegistry:
        registry = PermissionRegistry()
        if config.scenario == "single":
            registry.register_app(config.scope_id)
        elif config.scenario == "joint":
            for member in config.members:
                registry.register_app(member)
            registry.register_group(
                Group(identifier=config.scope_id, members=frozenset(config.members))
            )
        else:
            registry.register_app(config.scope_id)
            for member in config.members:
                registry.register_app(member)
        for source, target, capability in config.grants:
            registry.grant(source, target, capability)
        return registry

    def _preconditions_met(self) -> bool:
        if self.config.scenario == "joint":
            return not self.permissions.missing_for_group_mode(
                self.config.scope_id, self.config.mode
            )
        if self.config.scenario == "new_problem":
            return all(
                self.permissions.check(member, self.config.scope_id, "ShareData")
                for member in self.config.members
            )
        return True

    def _check_preconditions(self, strict: bool) -> bool:
        ok = self._preconditions_met()
        if strict and not ok:
            raise PermissionDenied(
                f"sharing grants required for a {self.config.mode or 'data'}-mode "
                f"{self.config.scenario} job are missing"
            )
        return ok

    def maybe_activate(self) -> None:
        """Configuring jobs switch to running once grants satisfy the mode."""
        if self.status == "configuring" and self._preconditions_met():
            self.status = "running"

    @property
    def scope_id(self) -> str:
        return self.config.scope_id

    def latest_round(self) -> int:
        return len(self.models[self.scope_id]) - 1

    def model_at(self, scope: str, round_index: int | None) -> ModelParams:
        if scope not in self.models:
            raise NotFoundError(f"job {self.job_id} has no scope {scope!r}")
        history = self.models[scope]
        if round_index is None:
            round_index = len(history) - 1
        if not (0 <= round_index < len(history)):
            raise NotFoundError(
                f"round {round_index} not available (have 0..{len(history) - 1})"
            )
        return history[round_index]


class JobStore:
    """Owns every job, assigns ids, and mirrors state to disk when given a
    data directory. Reloading the same directory restores all closed rounds
    bit-exactly."""

    def __init__(self, data_dir: str | None = None):
        self.data_dir = data_dir
        self.lock = threading.RLock()
        self._jobs: dict[str, Job] = {}
        self._next_id = 1
        if data_dir is not None:
            os.makedirs(os.path.join(data_dir, "jobs"), exist_ok=True)
            self._reload()

    # -- id and path helpers --

    def _job_dir(self, job_id: str) -> str:
        return os.path.join(self.data_dir, "jobs", job_id)

    @staticmethod
    def _write_json(path: str, payload: dict) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
        os.replace(tmp, path)

    # -- persistence --

    def _persist_config(self, job: Job) -> None:
        if self.data_dir is None:
            return
        job_dir = self._job_dir(job.job_id)
        os.makedirs(os.path.join(job_dir, "rounds"), exist_ok=True)
        self._write_json(os.path.join(job_dir, "config.json"), job.config.to_dict())
        self._persist_state(job)

    def _persist_state(self, job: Job) -> None:
        if self.data_dir is None:
            return
        self._write_json(
            os.path.join(self._job_dir(job.job_id), "state.json"),
            {
                "status": job.status,
                "completed_reason": job.completed_reason,
                "permissions": job.permissions.to_dict(),
            },
        )

    def _persist_round(self, job: Job, state: RoundState) -> None:
        if self.data_dir is None:
            return
        updates = [
            {
                "device_id": device,
                "scope": scope,
                "n": n,
                "payload_b64": base64.b64encode(to_bytes(params)).decode("ascii"),
            }
            for (device, scope), (params, n) in sorted(state.updates.items())
        ]
        results = [
            {
                "scope": scope,
                "result_b64": base64.b64encode(
                    to_bytes(job.models[scope][state.index])
                ).decode("ascii"),
            }
            for scope in sorted(job.models)
        ]
        payload = {
            "round": state.index,
            "status": state.status,
            "selection": list(state.selection),
            "opened_at": state.opened_at,
            "updates": updates,
            "results": results,
        }
        path = os.path.join(self._job_dir(job.job_id), "rounds", f"{state.index}.json")
        self._write_json(path, payload)
        self._persist_metrics(job)

    def _persist_metrics(self, job: Job) -> None:
        if self.data_dir is None:
            return
        path = os.path.join(self._job_dir(job.job_id), "metrics.csv")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_COLUMNS)
            for row in job.metrics:
                writer.writerow(row.as_csv_values())
        os.replace(tmp, path)

    def _reload(self) -> None:
        jobs_root = os.path.join(self.data_dir, "jobs")
        for job_id in sorted(os.listdir(jobs_root)):
            job_dir = os.path.join(jobs_root, job_id)
            config_path = os.path.join(job_dir, "config.json")
            if not os.path.isfile(config_path):
                continue
            with open(config_path, encoding="utf-8") as fh:
                config = JobConfig.from_dict(json.load(fh))
            # grants may have arrived after creation, so build leniently and
            # restore the persisted status and registry below
            job = Job(job_id, replace(config, configure_only=True))
            job.config = config
            state_path = os.path.join(job_dir, "state.json")
            if os.path.isfile(state_path):
                with open(state_path, encoding="utf-8") as fh:
                    saved = json.load(fh)
                job.status = saved["status"]
                job.completed_reason = saved.get("completed_reason")
                job.permissions = PermissionRegistry.from_dict(saved["permissions"])
            else:
                job.maybe_activate()
            rounds_dir = os.path.join(job_dir, "rounds")
            closed = sorted(
                int(name[: -len(".json")])
                for name in os.listdir(rounds_dir)
                if name.endswith(".json")
            )
            for index in closed:
                if index != job.latest_round() + 1:
                    break  # a gap means later files are from an abandoned path
                with open(os.path.join(rounds_dir, f"{index}.json"), encoding="utf-8") as fh:
                    saved = json.load(fh)
                state = RoundState(
                    index=index,
                    selection=tuple(saved["selection"]),
                    opened_at=saved["opened_at"],
                    status=saved["status"],
                )
                for item in saved["updates"]:
                    params = from_bytes(base64.b64decode(item["payload_b64"]))
                    state.updates[(int(item["device_id"]), item["scope"])] = (
                        params,
                        int(item["n"]),
                    )
                for result in saved["results"]:
                    job.models[result["scope"]].append(
                        from_bytes(base64.b64decode(result["result_b64"]))
                    )
                job.rounds[index] = state
                job.current_round = index + 1
                self._append_metrics_rows(job, state)
            if job.status == "running" and job.latest_round() >= config.effective_rounds:
                job.status = "completed"
                job.completed_reason = (
                    "budget_exhausted"
                    if config.effective_rounds < config.rounds
                    else "rounds_finished"
                )
            self._persist_metrics(job)
            self._jobs[job_id] = job
            numeric = int(job_id.split("-")[-1])
            self._next_id = max(self._next_id, numeric + 1)

    # -- job lifecycle --

    def create_job(self, config: JobConfig) -> Job:
        config.validate()
        with self.lock:
            job_id = f"job-{self._next_id:04d}"
            self._next_id += 1
            job = Job(job_id, config)
            self._jobs[job_id] = job
            self._persist_config(job)
            return job

    def get(self, job_id: str) -> Job:
        with self.lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise NotFoundError(f"no such job {job_id!r}")
        self._tick(job)
        return job

    def jobs(self) -> list[Job]:
        with self.lock:
            items = sorted(self._jobs.items())
        return [job for _, job in items]

    def _tick(self, job: Job) -> None:
        """Lazy timeout sweep: close the open round once its deadline passed."""
        with job.lock:
            state = job.rounds.get(job.current_round)
            if (
                state is not None
                and not state.closed
                and time.time() - state.opened_at >= job.config.timeout_s
            ):
                self._close(job, state)

    # -- permissions --

    def apply_permission_ops(self, job_id: str, ops: list[dict]) -> list[dict]:
        """Apply a batch of grant/revoke operations atomically: any invalid
        entry rejects the whole batch before state changes."""
        job = self.get(job_id)
        with job.lock:
            known = job.permissions.known_apps() | (
                {job.config.scope_id} if job.config.scenario == "joint" else set()
            )
            for op in ops:
                action = op.get("action")
                if action not in ("grant", "revoke"):
                    raise ConfigurationError(f"unknown permission action {action!r}")
                if op.get("capability") not in CAPABILITIES:
                    raise ConfigurationError(f"unknown capability {op.get('capability')!r}")
                for side in ("source", "target"):
                    if op.get(side) not in known:
                        raise NotFoundError(f"unknown app {op.get(side)!r} in {action}")
            results = []
            for op in ops:
                if op["action"] == "grant":
                    job.permissions.grant(op["source"], op["target"], op["capability"])
                else:
                    job.permissions.revoke(op["source"], op["target"], op["capability"])
                results.append({**op, "applied": True})
            job.maybe_activate()
            self._persist_state(job)
            return results

    # -- round protocol --

    def select_clients(self, job_id: str, round_index: int, device_ids: list[int]) -> RoundState:
        """Selection for a round: deterministic in (job seed, round). Opens the
        round on first access when it is the job's current round."""
        job = self.get(job_id)
        with job.lock:
            if job.status == "configuring":
                raise ProtocolError(
                    f"job {job_id} is awaiting sharing grants before rounds can open"
                )
            state = job.rounds.get(round_index)
            if state is not None:
                return state
            if job.status != "running":
                raise ProtocolError(f"job {job_id} is {job.status}")
            if round_index != job.current_round:
                raise ProtocolError(
                    f"round {round_index} is not current (current is {job.current_round})"
                )
            if not device_ids:
                raise ProtocolError("no devices registered to select from")
            universe = sorted(set(int(d) for d in device_ids))
            want = min(
                len(universe),
                max(1, math.ceil(job.config.client_fraction * len(universe))),
            )
            rng = np.random.default_rng(derive_seed(job.config.seed, "select", round_index))
            chosen = rng.choice(np.array(universe, dtype=np.int64), size=want, replace=False)
            state = RoundState(
                index=round_index,
                selection=tuple(sorted(int(d) for d in chosen)),
                opened_at=time.time(),
            )
            job.rounds[round_index] = state
            return state

    def submit_update(
        self,
        job_id: str,
        round_index: int,
        device_id: int,
        entries: list[tuple[str, ModelParams, int]],
    ) -> RoundState:
        """Record a device's trained parameters for the open round. Resubmits
        overwrite (last write wins); late or unselected submissions fail."""
        job = self.get(job_id)
        with job.lock:
            if job.status != "running":
                raise ProtocolError(f"job {job_id} is {job.status}, not accepting updates")
            state = job.rounds.get(round_index)
            if state is None:
                raise ProtocolError(f"round {round_index} was never opened")
            if state.closed:
                raise ProtocolError(f"round {round_index} already closed ({state.status})")
            if device_id not in state.selection:
                raise ProtocolError(
                    f"device {device_id} was not selected for round {round_index}"
                )
            if not entries:
                raise ProtocolError("update carries no entries")
            expected = (job.config.feature_dim, job.config.num_classes)
            for scope, params, n in entries:
                if scope not in job.models:
                    raise ProtocolError(f"unknown scope {scope!r} for job {job_id}")
                if (params.feature_dim, params.num_classes) != expected:
                    raise ProtocolError(
                        f"update for scope {scope!r} has shape "
                        f"{(params.feature_dim, params.num_classes)}, expected {expected}"
                    )
                if n < 1:
                    raise ProtocolError("sample count must be >= 1")
            for scope, params, n in entries:
                state.updates[(device_id, scope)] = (params, n)
            if state.reported_devices() == set(state.selection):
                self._close(job, state)
            return state

    def close_round(self, job_id: str, round_index: int) -> RoundState:
        """Close the round now with whatever updates arrived. Closing an
        already-closed round is a no-op so drivers can always call it."""
        job = self.get(job_id)
        with job.lock:
            state = job.rounds.get(round_index)
            if state is None:
                raise ProtocolError(f"round {round_index} was never opened")
            if not state.closed:
                self._close(job, state)
            return state

    def _close(self, job: Job, state: RoundState) -> None:
        any_update = bool(state.updates)
        state.status = "Aggregated" if any_update else "TimedOut"
        for scope in sorted(job.models):
            history = job.models[scope]
            scoped = [
                (params, n)
                for (device, s), (params, n) in sorted(state.updates.items())
                if s == scope
            ]
            if scoped:
                history.append(federated_aggregate(scoped))
            else:
                history.append(history[-1])
        self._append_metrics_rows(job, state)
        job.current_round = state.index + 1
        if state.index >= job.config.effective_rounds:
            job.status = "completed"
            job.completed_reason = (
                "budget_exhausted"
                if job.config.effective_rounds < job.config.rounds
                else "rounds_finished"
            )
        self._persist_round(job, state)
        self._persist_state(job)

    def _append_metrics_rows(self, job: Job, state: RoundState) -> None:
        eval_batch = job.config.eval_batch()
        for scope in sorted(job.models):
            n_updates = sum(1 for (_, s) in state.updates if s == scope)
            accuracy = None
            if eval_batch is not None:
                accuracy = evaluate(job.models[scope][state.index], eval_batch)
            job.metrics.append(
                MetricsRow(
                    round_index=state.index,
                    scope=scope,
                    seed=job.config.seed,
                    accuracy=accuracy,
                    n_updates=n_updates,
                    status=state.status,
                )
            )

    # -- queries --

    def get_global_model(
        self, job_id: str, scope: str | None = None, round_index: int | None = None
    ) -> tuple[str, int, ModelParams]:
        job = self.get(job_id)
        with job.lock:
            scope = scope or job.scope_id
            params = job.model_at(scope, round_index)
            resolved = (
                round_index if round_index is not None else len(job.models[scope]) - 1
            )
            return scope, resolved, params

    def metrics_csv(self, job_id: str) -> str:
        job = self.get(job_id)
        with job.lock:
            buf = io.StringIO()
            writer = csv.writer(buf)
            writer.writerow(METRICS_COLUMNS)
            for row in job.metrics:
                writer.writerow(row.as_csv_values())
            return buf.getvalue()

    def metrics_rows(self, job_id: str) -> list[dict]:
        job = self.get(job_id)
        with job.lock:
            return [row.to_dict() for row in job.metrics]

    def terminate_job(self, job_id: str) -> Job:
        """Stop a job immediately; the model history up to the last closed
        round stays readable. Idempotent."""
        job = self.get(job_id)
        with job.lock:
            if job.status not in ("completed", "terminated"):
                job.status = "terminated"
                job.completed_reason = "terminated"
                open_state = job.rounds.get(job.current_round)
                if open_state is not None and not open_state.closed:
                    open_state.status = "Cancelled"
            self._persist_state(job)
            return job

    def job_summary(self, job: Job) -> dict:
        with job.lock:
            return {
                "job_id": job.job_id,
                "status": job.status,
                "completed_reason": job.completed_reason,
                "scenario": job.config.scenario,
                "scope_id": job.config.scope_id,
                "mode": job.config.mode,
                "rounds": job.config.rounds,
                "effective_rounds": job.config.effective_rounds,
                "current_round": job.current_round,
                "latest_model_round": job.latest_round(),
                "seed": job.config.seed,
            }
