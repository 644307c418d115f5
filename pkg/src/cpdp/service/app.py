"""FastAPI application exposing the four pipeline commands.

Domain errors map to HTTP 400 with a stable ``{code, message}`` body; the
CLI relays that body verbatim, so error reporting is identical whether the
app runs in-process or behind a real server.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from cpdp import __version__, pipeline
from cpdp.errors import CpdpError
from cpdp.service.schemas import (
    EvaluateResponse,
    FitResponse,
    HealthResponse,
    PredictResponse,
    RunRequest,
    SynthResponse,
)

log = logging.getLogger(__name__)


def create_app() -> FastAPI:
    app = FastAPI(title="cpdp", version=__version__)

    @app.exception_handler(CpdpError)
    async def _domain_error(request: Request, exc: CpdpError) -> JSONResponse:
        log.warning("request failed: [%s] %s", exc.code, exc.message)
        return JSONResponse(status_code=400, content={"code": exc.code, "message": exc.message})

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/v1/fit", response_model=FitResponse)
    def fit(request: RunRequest) -> FitResponse:
        return pipeline.run_fit(request.config)

    @app.post("/v1/predict", response_model=PredictResponse)
    def predict(request: RunRequest) -> PredictResponse:
        return pipeline.run_predict(request.config)

    @app.post("/v1/synth", response_model=SynthResponse)
    def synth(request: RunRequest) -> SynthResponse:
        return pipeline.run_synth(request.config)

    @app.post("/v1/evaluate", response_model=EvaluateResponse)
    def evaluate(request: RunRequest) -> EvaluateResponse:
        return pipeline.run_evaluate(request.config)

    return app
