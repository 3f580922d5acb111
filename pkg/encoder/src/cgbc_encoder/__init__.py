"""Encodes real texts and images into cgbc embedding containers."""

from .backend import ClipBackend, EncodeError
from .jobs import DEFAULT_BATCH, EncodeJob, encode_images, encode_texts
from .similarity import record_similarity_fixture, verify_similarity_fixture
from .tiny import write_tiny_checkpoint

__all__ = [
    "ClipBackend",
    "DEFAULT_BATCH",
    "EncodeError",
    "EncodeJob",
    "encode_images",
    "encode_texts",
    "record_similarity_fixture",
    "verify_similarity_fixture",
    "write_tiny_checkpoint",
]
