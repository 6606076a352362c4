"""HTTP face of the encoder.

POST /embed maps {"inputs": [{"segments": [...]}, ...]} to order-aligned
vectors; GET /health describes the served model. Malformed requests come
back as 400 with an "error" field; if the model failed to load, every
endpoint answers 503 so clients can tell a broken service from a bad
request.
"""

import logging

from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from py_embedder.config import ServiceConfig
from py_embedder.encoder import Encoder

log = logging.getLogger(__name__)


class EmbedInput(BaseModel):
    segments: list[str] = Field(min_length=1, max_length=2)


class EmbedRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model: str | None = None
    inputs: list[EmbedInput] = Field(min_length=1)
    max_tokens: int | None = Field(default=None, ge=8)


def create_app(config: ServiceConfig, encoder_factory=Encoder) -> FastAPI:
    app = FastAPI(title="py-embedder", docs_url=None, redoc_url=None)
    try:
        encoder = encoder_factory(config)
        load_error = None
    except Exception as exc:  # surface as 503, not a dead process
        encoder = None
        load_error = f"model load failed: {exc}"
        log.error("%s", load_error)

    @app.exception_handler(RequestValidationError)
    async def malformed_request(request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/health")
    def health():
        if encoder is None:
            return JSONResponse(status_code=503, content={"error": load_error})
        return {
            "name": config.model,
            "model_version": encoder.version,
            "dim": encoder.dim,
            "max_tokens": encoder.max_tokens,
            "pooling": config.pooling,
        }

    @app.post("/embed")
    def embed(request: EmbedRequest):
        if encoder is None:
            return JSONResponse(status_code=503, content={"error": load_error})
        if request.model is not None and request.model != config.model:
            return JSONResponse(
                status_code=400,
                content={"error": f"unknown model {request.model!r}; serving {config.model!r}"},
            )
        vectors = encoder.embed(
            [tuple(item.segments) for item in request.inputs],
            max_tokens=request.max_tokens,
        )
        return {
            "dim": encoder.dim,
            "vectors": vectors,
            "model_version": encoder.version,
        }

    return app
