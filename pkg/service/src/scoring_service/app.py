"""The HTTP surface: ``POST /score`` and ``GET /health``.

Wire protocol: request ``{"inputs": [string, ...]}``, response
``{"scores": [real, ...]}``, order-aligned, every score in [0, 1].
Malformed bodies get status 400; batches over the advertised limit get 413.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .backends import Backend, MalformedInput

DEFAULT_MAX_BATCH_SIZE = 64


class ScoreRequest(BaseModel):
    inputs: list[str]


class ScoreResponse(BaseModel):
    scores: list[float]


class HealthResponse(BaseModel):
    backend: str
    max_batch_size: int


def create_app(backend: Backend, max_batch_size: int = DEFAULT_MAX_BATCH_SIZE) -> FastAPI:
    app = FastAPI(title="scoring-service")
    app.state.backend = backend
    app.state.max_batch_size = max_batch_size

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors())})

    @app.post("/score", response_model=ScoreResponse)
    def score(request: ScoreRequest):
        if len(request.inputs) > max_batch_size:
            return JSONResponse(
                status_code=413,
                content={
                    "detail": f"batch of {len(request.inputs)} inputs exceeds "
                    f"the limit of {max_batch_size}"
                },
            )
        try:
            scores = backend.score(request.inputs)
        except MalformedInput as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        if len(scores) != len(request.inputs) or any(
            not 0.0 <= s <= 1.0 for s in scores
        ):
            return JSONResponse(
                status_code=500,
                content={"detail": f"backend {backend.name} broke the score contract"},
            )
        return ScoreResponse(scores=scores)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(backend=backend.name, max_batch_size=max_batch_size)

    return app
