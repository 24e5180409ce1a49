"""Chat-completion and embedding access.

Two implementations share one duck-typed surface (``complete`` and
``embed_batch``): :class:`HttpGateway` talks to the repo's small wire protocol
and :class:`opinionsum.mock.MockGateway` answers offline.
"""
from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence, TypeVar

import httpx
import numpy as np

from .domain import OpinionError

log = logging.getLogger(__name__)

T = TypeVar("T")


class ProviderError(OpinionError):
    pass


class ProviderUnavailable(ProviderError):
    pass


class AuthError(ProviderError):
    pass


class UnscriptedPrompt(ProviderError):
    pass


class DimensionMismatch(ProviderError, ValueError):
    pass


class EmptyText(ProviderError, ValueError):
    pass


class MalformedPayload(OpinionError, ValueError):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = None
    # Local annotations (task name, structured inputs). Never sent on the wire;
    # the offline mock reads them instead of re-parsing prompt text.
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.system_prompt.strip() or not self.user_prompt.strip():
            raise ValueError("prompts must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def wire(self) -> dict:
        return {
            "model": self.model,
            "system": self.system_prompt,
            "user": self.user_prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str = "http://localhost:8000"
    api_key_env_var: str = "OPINIONSUM_API_KEY"
    max_parallel: int = 4
    max_retries: int = 3
    backoff_base_ms: int = 250
    embedding_model: str = "all-MiniLM-L6-v2"
    timeout_s: float = 60.0

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.backoff_base_ms < 1:
            raise ValueError("backoff_base_ms must be positive")


class Gateway(Protocol):
    max_retries: int

    def complete(self, req: CompletionRequest) -> str: ...

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def check_texts(texts: Sequence[str]) -> None:
    if len(texts) == 0:
        raise EmptyText("embed_batch needs at least one text")
    for i, t in enumerate(texts):
        if not isinstance(t, str) or not t.strip():
            raise EmptyText(f"text #{i} is empty")


# --- JSON payloads -----------------------------------------------------------

_decoder = json.JSONDecoder()


def parse_json_payload(raw: str) -> Any:
    """Parse the first balanced top-level JSON object found in ``raw``.

    Leading prose and markdown code fences are skipped; the payload itself is
    never rewritten.
    """
    first_error: int | None = None
    pos = raw.find("{")
    while pos != -1:
        try:
            obj, _ = _decoder.raw_decode(raw, pos)
        except json.JSONDecodeError as e:
            if first_error is None:
                first_error = e.pos
        else:
            if isinstance(obj, dict):
                return obj
        pos = raw.find("{", pos + 1)
    if first_error is None:
        raise MalformedPayload("no JSON object found", len(raw.encode("utf-8")))
    raise MalformedPayload("invalid JSON object", len(raw[:first_error].encode("utf-8")))


def complete_parsed(
    gateway: Gateway,
    req: CompletionRequest,
    parse: Callable[[str], T],
    retry_on: tuple[type[BaseException], ...] = (MalformedPayload,),
    max_retries: int | None = None,
) -> T:
    """Complete and parse, re-prompting (same request) when parsing fails."""
    budget = gateway.max_retries if max_retries is None else max_retries
    attempt = 0
    while True:
        raw = gateway.complete(req)
        try:
            return parse(raw)
        except retry_on as e:
            if attempt >= budget:
                raise
            attempt += 1
            log.warning("unparseable response (%s); re-prompting %d/%d", e, attempt, budget)


def complete_json(gateway: Gateway, req: CompletionRequest, max_retries: int | None = None) -> dict:
    return complete_parsed(gateway, req, parse_json_payload, max_retries=max_retries)


# --- live adapter ------------------------------------------------------------

_TRANSIENT_STATUS = {408, 425, 429, 500, 502, 503, 504}


class _Transient(Exception):
    pass


class HttpGateway:
    """Client for the ``/chat`` and ``/embed`` endpoints described in the README."""

    def __init__(
        self,
        config: ProviderConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config
        self.max_retries = config.max_retries
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._rng_lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(config.max_parallel)

    def _headers(self) -> dict:
        key = os.environ.get(self.config.api_key_env_var)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _backoff(self, attempt: int) -> float:
        with self._rng_lock:
            jitter = self._rng.random()
        return self.config.backoff_base_ms * (2 ** attempt) * (1.0 + jitter) / 1000.0

    def _post(self, path: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        for attempt in range(self.config.max_retries + 1):
            log.info("POST %s attempt %d", path, attempt + 1)
            try:
                with self._slots:
                    resp = self._client.post(url, json=payload, headers=self._headers())
                if resp.status_code in (401, 403):
                    raise AuthError(f"{path}: credentials rejected ({resp.status_code})")
                if resp.status_code in _TRANSIENT_STATUS:
                    raise _Transient(f"HTTP {resp.status_code}")
                resp.raise_for_status()
                return resp.json()
            except (_Transient, httpx.TransportError) as e:
                if attempt == self.config.max_retries:
                    raise ProviderUnavailable(f"{path}: {e} after {attempt + 1} attempts") from e
                delay = self._backoff(attempt)
                log.warning("%s: transient failure %s; retrying in %.3fs", path, e, delay)
                self._sleep(delay)
            except httpx.HTTPStatusError as e:
                raise ProviderError(f"{path}: {e}") from e
        raise AssertionError("unreachable")

    def complete(self, req: CompletionRequest) -> str:
        body = self._post("/chat", req.wire())
        text = body.get("text")
        if not isinstance(text, str):
            raise ProviderError("chat response lacks a 'text' string")
        return text

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        check_texts(texts)
        body = self._post("/embed", {"model": self.config.embedding_model, "inputs": list(texts)})
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise DimensionMismatch("embedding count does not match input count")
        dims = {len(v) for v in vectors}
        if len(dims) != 1 or 0 in dims:
            raise DimensionMismatch(f"inconsistent embedding lengths {sorted(dims)}")
        arr = np.asarray(vectors, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ProviderError("non-finite embedding values")
        return l2_normalize(arr)

    def close(self) -> None:
        self._client.close()
