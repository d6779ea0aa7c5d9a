"""Embedding and chat backends."""

from .base import (
    ChatMessage,
    Provider,
    ProviderConfig,
    ProviderError,
    RequestLimiter,
    ValidationError,
    system,
    user,
)
from .mock import MockProvider, hash_vector, pipeline_handlers, prompt_key
from .openai_compat import OpenAICompatibleProvider

__all__ = [
    "ChatMessage",
    "MockProvider",
    "OpenAICompatibleProvider",
    "Provider",
    "ProviderConfig",
    "ProviderError",
    "RequestLimiter",
    "ValidationError",
    "hash_vector",
    "pipeline_handlers",
    "prompt_key",
    "system",
    "user",
]
