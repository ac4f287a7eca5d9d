"""Request/response bodies for the HTTP API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class CreateSessionRequest(BaseModel):
    subject_id: str = Field(min_length=1)


class CreateSessionResponse(BaseModel):
    session_id: str


class IBISampleBody(BaseModel):
    t_ms: float
    ibi_ms: float = Field(gt=0)


class IBIBatchRequest(BaseModel):
    samples: list[IBISampleBody] = Field(default_factory=list)


class IngestAck(BaseModel):
    beats_accepted: int
    beats_rejected: int
    window_ready: bool


class PredictionResponse(BaseModel):
    comfort: float
    condition: int
    class_probs: list[float]
    model_version: int
    window_end_t: float


class FeedbackRequest(BaseModel):
    comfort: float = Field(ge=1.0, le=10.0)
    temp_adjust: Optional[int] = Field(default=None, ge=-3, le=3)


class FeedbackAck(BaseModel):
    stored: int
    recalibration_triggered: bool


class ActuatorPlanResponse(BaseModel):
    levels: dict[str, int]
    total_power_w: float
    predicted_comfort_after: float
    target_unmet: bool


class ModelRecordResponse(BaseModel):
    subject_id: str
    model_version: int
    status: str
    provenance: dict


class RecalibrateResponse(BaseModel):
    job_id: str


class JobStatusResponse(BaseModel):
    job_id: str
    subject_id: str
    status: str
    model_version: Optional[int] = None
    error: Optional[str] = None


class InsufficientDataResponse(BaseModel):
    detail: str
    seconds_remaining: float
