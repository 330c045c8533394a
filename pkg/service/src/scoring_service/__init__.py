"""Batch relevance-scoring HTTP service."""

from .app import DEFAULT_MAX_BATCH_SIZE, create_app
from .backends import (
    Backend,
    MalformedInput,
    ModelBackend,
    OverlapBackend,
    StubBackend,
    make_backend,
    split_template,
)

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "DEFAULT_MAX_BATCH_SIZE",
    "MalformedInput",
    "ModelBackend",
    "OverlapBackend",
    "StubBackend",
    "create_app",
    "make_backend",
    "split_template",
]
