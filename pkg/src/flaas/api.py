"""HTTP surface: a thin JSON layer over the job store.

Routes (all under /api/v1, bearer-token auth):
  POST   /jobs                              create a job            (customer)
  POST   /jobs/{id}/permissions             atomic grant/revoke ops (customer)
  GET    /jobs/{id}/rounds/{r}/selection    selection + grant mirror (both)
  POST   /jobs/{id}/rounds/{r}/updates      device round upload     (device)
  GET    /jobs/{id}/model                   fetch model bytes       (both)
  GET    /jobs/{id}/metrics                 metrics rows or CSV     (customer)
  DELETE /jobs/{id}                         terminate               (customer)

Model parameters travel as base64 of the canonical binary layout, optionally
deflate-compressed. Device uploads above the configured payload cap are
rejected with 413 before parsing.
"""

from __future__ import annotations

import base64
import json
import os
import zlib

from fastapi import Depends, FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.security.utils import get_authorization_scheme_param
from fastapi.staticfiles import StaticFiles

from .config import ServerConfig, TokenEntry
from .core import from_bytes, to_bytes
from .device import UploadBundle
from .errors import (
    ConfigurationError,
    ContractError,
    FlaasError,
    NotFoundError,
    PermissionDenied,
    ProtocolError,
)
from .jobs import JobConfig, JobStore

_STATUS_BY_ERROR = (
    (NotFoundError, 404),
    (PermissionDenied, 409),
    (ProtocolError, 409),
    (ConfigurationError, 422),
    (ContractError, 422),
)


class AuthError(Exception):
    def __init__(self, status: int, detail: str):
        self.status = status
        self.detail = detail


def _http_status(exc: FlaasError) -> int:
    for klass, status in _STATUS_BY_ERROR:
        if isinstance(exc, klass):
            return status
    return 500


def create_app(config: ServerConfig, store: JobStore | None = None) -> FastAPI:
    app = FastAPI(title="flaas", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.config = config
    app.state.store = store if store is not None else JobStore(config.data_dir)

    def authenticate(request: Request) -> TokenEntry:
        header = request.headers.get("Authorization", "")
        scheme, token = get_authorization_scheme_param(header)
        if scheme.lower() != "bearer" or not token:
            raise AuthError(401, "missing bearer token")
        entry = config.lookup(token)
        if entry is None:
            raise AuthError(401, "unknown token")
        return entry

    def customer(entry: TokenEntry = Depends(authenticate)) -> TokenEntry:
        if entry.role != "customer":
            raise AuthError(403, "customer role required")
        return entry

    def device(entry: TokenEntry = Depends(authenticate)) -> TokenEntry:
        if entry.role != "device":
            raise AuthError(403, "device role required")
        return entry

    @app.exception_handler(AuthError)
    async def _auth_error(_, exc: AuthError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @app.exception_handler(FlaasError)
    async def _flaas_error(_, exc: FlaasError):
        return JSONResponse(status_code=_http_status(exc), content={"detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    async def _json_body(request: Request) -> dict:
        try:
            body = await request.json()
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigurationError(f"body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise ConfigurationError("body must be a JSON object")
        return body

    @app.post("/api/v1/jobs", status_code=201)
    async def create_job(request: Request, _=Depends(customer)):
        body = await _json_body(request)
        job = app.state.store.create_job(JobConfig.from_dict(body))
        return app.state.store.job_summary(job)

    @app.post("/api/v1/jobs/{job_id}/permissions")
    async def permission_ops(job_id: str, request: Request, _=Depends(customer)):
        body = await _json_body(request)
        ops = body.get("ops")
        if not isinstance(ops, list) or not ops:
            raise ConfigurationError("body must carry a non-empty ops list")
        results = app.state.store.apply_permission_ops(job_id, ops)
        job = app.state.store.get(job_id)
        return {"job_id": job_id, "results": results, "status": job.status}

    @app.get("/api/v1/jobs/{job_id}/rounds/{round_index}/selection")
    def selection(job_id: str, round_index: int, _=Depends(authenticate)):
        state = app.state.store.select_clients(job_id, round_index, config.device_ids())
        job = app.state.store.get(job_id)
        with job.lock:
            return {
                "job_id": job_id,
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

    @app.post("/api/v1/jobs/{job_id}/rounds/{round_index}/updates")
    async def submit(job_id: str, round_index: int, request: Request, who=Depends(device)):
        body = await request.body()
        if len(body) > config.payload_cap:
            return JSONResponse(
                status_code=413,
                content={"detail": f"payload exceeds cap of {config.payload_cap} bytes"},
            )
        try:
            bundle = UploadBundle.from_wire(json.loads(body))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ContractError(f"update body is not valid JSON: {exc}") from exc
        if bundle.device_id != who.device_id:
            raise AuthError(403, "bundle device_id does not match the presented token")
        if bundle.round_index != round_index:
            raise ProtocolError(
                f"bundle is for round {bundle.round_index}, posted to round {round_index}"
            )
        state = app.state.store.submit_update(
            job_id,
            round_index,
            bundle.device_id,
            [(e.scope, e.params, e.sample_count) for e in bundle.entries],
        )
        return {
            "job_id": job_id,
            "round": round_index,
            "accepted": True,
            "reported": sorted(state.reported_devices()),
            "status": state.status,
        }

    @app.get("/api/v1/jobs/{job_id}/model")
    def get_model(
        job_id: str,
        scope: str | None = Query(default=None),
        round: int | None = Query(default=None),
        compress: bool = Query(default=False),
        _=Depends(authenticate),
    ):
        resolved_scope, resolved_round, params = app.state.store.get_global_model(
            job_id, scope, round
        )
        raw = to_bytes(params)
        if compress:
            raw = zlib.compress(raw)
        return {
            "job_id": job_id,
            "scope": resolved_scope,
            "round": resolved_round,
            "payload_b64": base64.b64encode(raw).decode("ascii"),
            "compressed": compress,
        }

    @app.get("/api/v1/jobs/{job_id}/metrics")
    def metrics(job_id: str, format: str = Query(default="json"), _=Depends(customer)):
        if format == "csv":
            return Response(
                content=app.state.store.metrics_csv(job_id),
                media_type="text/csv",
                headers={
                    "Content-Disposition": f'attachment; filename="{job_id}-metrics.csv"'
                },
            )
        job = app.state.store.get(job_id)
        return {
            "job_id": job_id,
            "status": job.status,
            "completed_reason": job.completed_reason,
            "current_round": job.current_round,
            "rounds_planned": job.config.effective_rounds,
            "rows": app.state.store.metrics_rows(job_id),
        }

    @app.delete("/api/v1/jobs/{job_id}")
    def terminate(job_id: str, _=Depends(customer)):
        job = app.state.store.terminate_job(job_id)
        return app.state.store.job_summary(job)

    if config.static_dir and os.path.isdir(config.static_dir):
        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


def decode_model_response(payload: dict):
    """Client-side helper: unpack a /model response into parameters."""
    raw = base64.b64decode(payload["payload_b64"])
    if payload.get("compressed"):
        raw = zlib.decompress(raw)
    return from_bytes(raw)
