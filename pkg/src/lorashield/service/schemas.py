"""Request/response models for the edit service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class EditRequestConfig(BaseModel):
    """Config JSON uploaded with an edit request.

    `base` names a weight container from the service catalog; base
    weights are never uploaded per request.
    """

    base: str
    steps: int = Field(default=10, ge=1)
    tau: float = Field(default=1e-5, gt=0)
    eta: float = Field(default=0.1, ge=0)
    learning_rate: float = Field(default=1e-3, gt=0)
    alpha: float = Field(default=1.0, gt=0, le=1)
    seed: int = 0
    compute_dtype: Literal["F32", "F64"] = "F64"
    patterns: list[str] | None = None
    rank: int | None = Field(default=None, ge=1)


class ArtifactLinks(BaseModel):
    adapter: str
    report: str


class JobResponse(BaseModel):
    job_id: str
    state: Literal["queued", "running", "succeeded", "failed"]
    submitted_at: str
    completed_at: str | None = None
    config: EditRequestConfig
    failure_reason: str | None = None
    artifacts: ArtifactLinks | None = None


class SubmitResponse(BaseModel):
    job_id: str


class BasesResponse(BaseModel):
    bases: list[str]


class HealthResponse(BaseModel):
    status: str
    queued: int
    workers: int


class ErrorBody(BaseModel):
    code: str
    message: str
    field: str | None = None
