"""Embedding microservice: a transformer encoder behind the segments-to-vectors
wire protocol (POST /embed, GET /health)."""

from py_embedder.config import ConfigurationError, ServiceConfig, load_service_config
from py_embedder.encoder import Encoder, segment_budgets
from py_embedder.app import create_app

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "Encoder",
    "ServiceConfig",
    "create_app",
    "load_service_config",
    "segment_budgets",
    "__version__",
]
