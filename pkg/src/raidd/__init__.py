"""Retrieval-augmented QA that indexes LLM-derived summaries and questions as handles for source chunks."""

from .core import (
    Chunk,
    ConfigError,
    DataError,
    DerivedDocument,
    Flavor,
    RetrievalConfig,
    TokenSequence,
    chunk,
    cosine,
    tokenize,
)
from .index import Index, IndexEntry, IndexManifest, load, save
from .ingest import build_index, derive_questions, derive_summaries, question_count
from .retrieval import RetrievalResult, retrieve

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "ConfigError",
    "DataError",
    "DerivedDocument",
    "Flavor",
    "Index",
    "IndexEntry",
    "IndexManifest",
    "RetrievalConfig",
    "RetrievalResult",
    "TokenSequence",
    "build_index",
    "chunk",
    "cosine",
    "derive_questions",
    "derive_summaries",
    "load",
    "question_count",
    "retrieve",
    "save",
    "tokenize",
]
