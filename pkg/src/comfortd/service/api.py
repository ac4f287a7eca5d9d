"""HTTP facade over :class:`comfortd.service.core.ComfortService`."""

from __future__ import annotations

from fastapi import FastAPI, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from ..ingest import IBISample
from .core import (
    ComfortService,
    ServiceConfig,
    UnknownJobError,
    UnknownSessionError,
    WindowNotReadyError,
)
from .schemas import (
    ActuatorPlanResponse,
    CreateSessionRequest,
    CreateSessionResponse,
    FeedbackAck,
    FeedbackRequest,
    IBIBatchRequest,
    IngestAck,
    JobStatusResponse,
    ModelRecordResponse,
    PredictionResponse,
    RecalibrateResponse,
)


def create_app(service: ComfortService) -> FastAPI:
    app = FastAPI(title="comfortd", version="0.1.0")
    app.state.service = service
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(UnknownSessionError)
    async def _unknown_session(request, exc):
        return JSONResponse(status_code=404, content={"detail": str(exc.args[0])})

    @app.exception_handler(UnknownJobError)
    async def _unknown_job(request, exc):
        return JSONResponse(status_code=404, content={"detail": str(exc.args[0])})

    @app.exception_handler(WindowNotReadyError)
    async def _warming_up(request, exc):
        return JSONResponse(
            status_code=409,
            content={"detail": str(exc), "seconds_remaining": exc.seconds_remaining},
        )

    @app.exception_handler(ValueError)
    async def _bad_request(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.post("/v1/sessions", status_code=201, response_model=CreateSessionResponse)
    def create_session(body: CreateSessionRequest):
        return {"session_id": service.create_session(body.subject_id)}

    @app.post("/v1/sessions/{session_id}/ibi", response_model=IngestAck)
    def ingest(session_id: str, body: IBIBatchRequest):
        samples = [IBISample(t_ms=s.t_ms, ibi_ms=s.ibi_ms) for s in body.samples]
        return service.ingest_ibi(session_id, samples)

    @app.get(
        "/v1/sessions/{session_id}/comfort",
        response_model=PredictionResponse,
        responses={409: {"description": "window not yet filled"}},
    )
    def comfort(session_id: str):
        return service.predict_comfort(session_id)

    @app.post("/v1/sessions/{session_id}/feedback", response_model=FeedbackAck)
    def feedback(session_id: str, body: FeedbackRequest):
        return service.submit_feedback(session_id, body.comfort, body.temp_adjust)

    @app.get("/v1/sessions/{session_id}/actuation", response_model=ActuatorPlanResponse)
    def actuation(session_id: str, target: float = Query(ge=1.0, le=10.0)):
        plan = service.plan(session_id, target)
        return {
            "levels": plan.levels,
            "total_power_w": plan.total_power_w,
            "predicted_comfort_after": plan.predicted_comfort_after,
            "target_unmet": plan.target_unmet,
        }

    @app.get("/v1/subjects/{subject_id}/models", response_model=list[ModelRecordResponse])
    def models(subject_id: str):
        return service.models(subject_id)

    @app.post(
        "/v1/subjects/{subject_id}/recalibrate",
        status_code=202,
        response_model=RecalibrateResponse,
    )
    def recalibrate(subject_id: str):
        return {"job_id": service.request_recalibration(subject_id)}

    @app.get("/v1/jobs/{job_id}", response_model=JobStatusResponse)
    def job(job_id: str):
        return service.job(job_id)

    return app


def create_app_from_config(config_path: str) -> FastAPI:
    return create_app(ComfortService(ServiceConfig.from_json(config_path)))
