"""HTTP client for OpenAI-compatible ``/embeddings`` and ``/chat/completions``."""

from __future__ import annotations

import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence

import httpx

from .base import (
    ChatMessage,
    ProviderConfig,
    ProviderError,
    RequestLimiter,
    check_messages,
    check_texts,
)

logger = logging.getLogger(__name__)

RETRY_STATUS = frozenset({429, 500, 502, 503, 504})
_BODY_EXCERPT = 300


class OpenAICompatibleProvider:
    """Blocking client, safe to share between threads.

    Retries 429/5xx responses, timeouts and connection errors with exponential
    backoff plus jitter; every other failure raises immediately.
    """

    def __init__(
        self,
        config: ProviderConfig,
        *,
        api_key: Optional[str] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
    ):
        self.config = config
        if api_key is None:
            api_key = os.environ.get(config.api_key_env)
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )
        self._limiter = RequestLimiter(config.base_url, config.max_parallel)
        self._sleep = sleep
        self._backoff_base = backoff_base
        self._backoff_cap = backoff_cap

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "OpenAICompatibleProvider":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _backoff(self, attempt: int) -> float:
        delay = min(self._backoff_cap, self._backoff_base * (2**attempt))
        return delay + random.uniform(0, delay)

    def _post(self, path: str, payload: dict) -> dict:
        last_error: Optional[ProviderError] = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self._backoff(attempt - 1))
            try:
                with self._limiter:
                    resp = self._client.post(path, json=payload)
            except httpx.TimeoutException as e:
                last_error = ProviderError(f"POST {path} timed out: {e}")
                continue
            except httpx.TransportError as e:
                last_error = ProviderError(f"POST {path} failed: {e}")
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError:
                    raise ProviderError(
                        f"POST {path} returned invalid JSON", status=200, body=resp.text[:_BODY_EXCERPT]
                    ) from None
            err = ProviderError(
                f"POST {path} returned HTTP {resp.status_code}: {resp.text[:_BODY_EXCERPT]}",
                status=resp.status_code,
                body=resp.text[:_BODY_EXCERPT],
            )
            if resp.status_code not in RETRY_STATUS:
                raise err
            logger.warning("retryable HTTP %s from %s (attempt %d)", resp.status_code, path, attempt + 1)
            last_error = err
        assert last_error is not None
        raise last_error

    def _embed_batch(self, batch: Sequence[str]) -> List[List[float]]:
        body = self._post("/embeddings", {"model": self.config.embed_model, "input": list(batch)})
        try:
            data = body["data"]
            if len(data) != len(batch):
                raise ProviderError(f"expected {len(batch)} embeddings, got {len(data)}")
            # Servers may reorder; "index" is authoritative when present.
            if all("index" in d for d in data):
                data = sorted(data, key=lambda d: d["index"])
            return [[float(x) for x in d["embedding"]] for d in data]
        except (KeyError, TypeError) as e:
            raise ProviderError(f"malformed embeddings response: {e!r}", body=str(body)[:_BODY_EXCERPT]) from None

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        check_texts(texts)
        size = self.config.embed_batch_size
        batches = [texts[i : i + size] for i in range(0, len(texts), size)]
        if len(batches) == 1:
            results = [self._embed_batch(batches[0])]
        else:
            with ThreadPoolExecutor(max_workers=self.config.max_parallel) as pool:
                results = list(pool.map(self._embed_batch, batches))
        vectors = [v for batch in results for v in batch]
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise ProviderError(f"provider returned mixed embedding dimensions: {sorted(dims)}")
        return vectors

    def chat(
        self,
        messages: Sequence[ChatMessage],
        temperature: float = 0.0,
        model: Optional[str] = None,
    ) -> str:
        check_messages(messages)
        payload = {
            "model": model or self.config.chat_model,
            "messages": [m.to_dict() for m in messages],
            "temperature": temperature,
        }
        body = self._post("/chat/completions", payload)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProviderError("malformed chat response", body=str(body)[:_BODY_EXCERPT]) from None
        if not content or not content.strip():
            raise ProviderError("provider returned an empty completion")
        return content
