from __future__ import annotations

import threading
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Protocol, Sequence

ROLES = ("system", "user", "assistant")


class ProviderError(RuntimeError):
    """A provider call failed (transport, HTTP status, timeout or empty completion)."""

    def __init__(self, message: str, status: Optional[int] = None, body: Optional[str] = None):
        super().__init__(message)
        self.status = status
        self.body = body


class ValidationError(ValueError):
    """Bad input to a provider call; never retried."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValidationError(f"unknown chat role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValidationError(f"{self.role} message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


def check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValidationError("messages must be non-empty")
    if messages[-1].role != "user":
        raise ValidationError("the last message must have role 'user'")


def check_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise ValidationError("embed() needs at least one text")
    for i, t in enumerate(texts):
        if not t:
            raise ValidationError(f"text {i} is empty")


@dataclass(frozen=True)
class ProviderConfig:
    """Connection and model settings for an OpenAI-compatible endpoint.

    Model names are configuration only. ``derive_model`` falls back to
    ``chat_model`` when unset.
    """

    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    embed_model: str = "text-embedding-ada-002"
    chat_model: str = "mistral-large-latest"
    judge_model: str = "gpt-4"
    derive_model: Optional[str] = None
    temperature: float = 0.0
    derive_temperature: float = 0.7
    judge_temperature: float = 0.0
    max_parallel: int = 4
    max_retries: int = 3
    timeout: float = 60.0
    embed_batch_size: int = 64

    def __post_init__(self) -> None:
        for name in ("temperature", "derive_temperature", "judge_temperature"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.embed_batch_size < 1:
            raise ValueError("embed_batch_size must be >= 1")

    @property
    def derivation_model(self) -> str:
        return self.derive_model or self.chat_model

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown provider keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


class Provider(Protocol):
    """What the engine needs from a model backend."""

    config: ProviderConfig

    def embed(self, texts: Sequence[str]) -> List[List[float]]: ...

    def chat(
        self,
        messages: Sequence[ChatMessage],
        temperature: float = 0.0,
        model: Optional[str] = None,
    ) -> str: ...


class RequestLimiter:
    """Process-wide cap on in-flight requests, one semaphore per endpoint.

    The first client created for an endpoint fixes its bound.
    """

    _lock = threading.Lock()
    _semaphores: Dict[str, threading.BoundedSemaphore] = {}

    def __init__(self, key: str, max_parallel: int):
        with self._lock:
            sem = self._semaphores.get(key)
            if sem is None:
                sem = threading.BoundedSemaphore(max_parallel)
                self._semaphores[key] = sem
        self._sem = sem

    def __enter__(self) -> "RequestLimiter":
        self._sem.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self._sem.release()
