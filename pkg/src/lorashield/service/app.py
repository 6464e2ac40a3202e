"""FastAPI application exposing the editing pipeline as a job service."""

from __future__ import annotations

import hashlib
import logging
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path

from fastapi import FastAPI, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from pydantic import ValidationError

from ..adapter import adapter_from_tensor_map
from ..concepts import spec_from_tensor_map
from ..container import read_container
from ..errors import LoraShieldError
from .jobs import ARTIFACTS, JobStore, WorkerPool
from .schemas import (
    ArtifactLinks,
    BasesResponse,
    EditRequestConfig,
    ErrorBody,
    HealthResponse,
    JobResponse,
    SubmitResponse,
)

log = logging.getLogger("lorashield.service")


@dataclass
class ServiceConfig:
    spool_dir: Path
    bases: dict[str, Path] = field(default_factory=dict)
    workers: int = 2
    queue_depth: int = 64
    max_upload_mb: int = 256
    ttl_hours: float = 24.0


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field_name: str | None = None):
        super().__init__(message)
        self.status = status
        self.body = ErrorBody(code=code, message=message, field=field_name)


def create_app(config: ServiceConfig) -> FastAPI:
    store = JobStore(config.spool_dir)
    pool = WorkerPool(store, dict(config.bases), config.workers, config.queue_depth)
    max_bytes = config.max_upload_mb * 1024 * 1024

    for name, path in config.bases.items():
        if not Path(path).is_file():
            raise FileNotFoundError(f"base {name!r}: no such container {path}")

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        store.sweep_expired(timedelta(hours=config.ttl_hours))
        pool.start()
        yield
        pool.stop()

    app = FastAPI(title="lorashield edit service", lifespan=lifespan)

    @app.exception_handler(ApiError)
    async def handle_api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status, content=exc.body.model_dump(exclude_none=True)
        )

    async def read_upload(upload: UploadFile | None, part: str) -> bytes:
        if upload is None:
            raise ApiError(400, "missing_part", f"multipart field {part!r} is required", part)
        data = await upload.read()
        if len(data) > max_bytes:
            raise ApiError(
                413, "payload_too_large",
                f"{part} is {len(data)} bytes; limit is {max_bytes}", part,
            )
        return data

    @app.post("/v1/edits", response_model=SubmitResponse, status_code=202)
    async def submit_edit(request: Request) -> SubmitResponse:
        form = await request.form()
        adapter_bytes = await read_upload(form.get("adapter"), "adapter")
        concept_bytes = await read_upload(form.get("concept"), "concept")
        config_part = form.get("config")
        if config_part is None:
            raise ApiError(400, "missing_part", "multipart field 'config' is required", "config")
        config_text = (
            (await config_part.read()).decode("utf-8")
            if isinstance(config_part, UploadFile)
            else str(config_part)
        )
        try:
            req = EditRequestConfig.model_validate_json(config_text)
        except ValidationError as exc:
            first = exc.errors()[0]
            field_name = ".".join(str(p) for p in first.get("loc", ())) or None
            raise ApiError(400, "invalid_config", first.get("msg", "invalid config"), field_name)
        if req.base not in pool.bases:
            raise ApiError(404, "unknown_base", f"no registered base named {req.base!r}", "base")
        try:
            adapter, _ = adapter_from_tensor_map(read_container(adapter_bytes))
            if not adapter.layers:
                raise LoraShieldError("adapter contains no LoRA layers")
        except LoraShieldError as exc:
            raise ApiError(400, "invalid_adapter", str(exc), "adapter")
        try:
            spec_from_tensor_map(read_container(concept_bytes))
        except LoraShieldError as exc:
            raise ApiError(400, "invalid_bundle", str(exc), "concept")

        record = store.create(adapter_bytes, concept_bytes, req)
        if not pool.submit(record.job_id):
            record.state = "failed"
            record.failure_reason = "queue full"
            store.write_record(record)
            raise ApiError(503, "queue_full", "edit queue is full; retry later")
        log.info("accepted job %s for base %s", record.job_id, req.base)
        return SubmitResponse(job_id=record.job_id)

    def job_response(job_id: str) -> JobResponse:
        record = store.read_record(job_id)
        if record is None:
            raise ApiError(404, "unknown_job", f"no job {job_id!r}")
        artifacts = None
        if record.state == "succeeded":
            artifacts = ArtifactLinks(
                adapter=f"/v1/edits/{job_id}/artifacts/adapter",
                report=f"/v1/edits/{job_id}/artifacts/report",
            )
        return JobResponse(
            job_id=record.job_id,
            state=record.state,
            submitted_at=record.submitted_at,
            completed_at=record.completed_at,
            config=EditRequestConfig.model_validate(record.config),
            failure_reason=record.failure_reason,
            artifacts=artifacts,
        )

    @app.get("/v1/edits/{job_id}", response_model=JobResponse)
    async def get_job(job_id: str) -> JobResponse:
        return job_response(job_id)

    @app.get("/v1/edits/{job_id}/artifacts/{kind}")
    async def download_artifact(job_id: str, kind: str) -> Response:
        record = store.read_record(job_id)
        if record is None:
            raise ApiError(404, "unknown_job", f"no job {job_id!r}")
        if kind not in ARTIFACTS:
            raise ApiError(404, "unknown_artifact", f"no artifact kind {kind!r}")
        if record.state != "succeeded":
            raise ApiError(
                409, "not_ready", f"job {job_id} is {record.state}; artifacts require success"
            )
        path = store.artifact_path(job_id, kind)
        data = path.read_bytes()
        media = "application/octet-stream" if kind == "adapter" else "application/json"
        return Response(
            content=data,
            media_type=media,
            headers={"ETag": '"' + hashlib.sha256(data).hexdigest() + '"'},
        )

    @app.get("/v1/bases", response_model=BasesResponse)
    async def list_bases() -> BasesResponse:
        return BasesResponse(bases=sorted(pool.bases))

    @app.get("/healthz", response_model=HealthResponse)
    async def healthz() -> HealthResponse:
        return HealthResponse(status="ok", queued=pool.queue.qsize(), workers=pool.workers)

    app.state.store = store
    app.state.pool = pool
    return app
