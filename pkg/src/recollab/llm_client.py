"""Chat-completion and embedding client with an offline mock mode.

Live mode speaks the OpenAI-compatible JSON protocol. Mock mode never
touches the network; it hands the prompt (and whatever structured context
the caller supplies) to a registered responder function.
"""
from __future__ import annotations

import enum
import logging
import os
import threading
import time
from dataclasses import dataclass, replace
from typing import Any, Callable, Mapping

import httpx
import numpy as np

log = logging.getLogger(__name__)


class Mode(enum.Enum):
    LIVE = "live"
    MOCK = "mock"


class LlmError(RuntimeError):
    pass


class MissingApiKey(LlmError):
    pass


class ServiceUnavailable(LlmError):
    """Raised once retries are exhausted; subclasses say why."""


class Timeout(ServiceUnavailable):
    pass


class HttpError(ServiceUnavailable):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class BadResponse(ServiceUnavailable):
    pass


class DimensionDrift(LlmError):
    pass


@dataclass(frozen=True)
class LlmConfig:
    base_url: str = "https://api.openai.com/v1"
    model_id: str = "gpt-5"
    embedding_model_id: str = "text-embedding-3-large"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 2
    max_in_flight: int = 4
    backoff: float = 1.0  # first retry delay in seconds, doubled after each failure
    mode: Mode = Mode.MOCK

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.backoff < 0:
            raise ValueError("backoff must be >= 0")
        object.__setattr__(self, "mode", Mode(self.mode))

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any]) -> "LlmConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown llm settings: {sorted(extra)}")
        return cls(**d)


# responder(prompt, context) -> reply text
Responder = Callable[[str, Mapping[str, Any]], str]


class LlmClient:
    """Shareable across threads; only the in-flight limit is serialized."""

    def __init__(
        self,
        cfg: LlmConfig | None = None,
        responder: Responder | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        environ: Mapping[str, str] | None = None,
    ):
        self.cfg = cfg or LlmConfig()
        self.responder = responder
        self._transport = transport
        self._sleep = sleep
        self._environ = os.environ if environ is None else environ
        self._slots = threading.BoundedSemaphore(self.cfg.max_in_flight)
        self._http: httpx.Client | None = None
        self._lock = threading.Lock()
        self.embedding_dim: int | None = None
        self.delays: list[float] = []  # every backoff sleep, in order

    @property
    def mock(self) -> bool:
        return self.cfg.mode is Mode.MOCK

    def with_responder(self, responder: Responder) -> "LlmClient":
        self.responder = responder
        return self

    def _key(self) -> str:
        key = self._environ.get(self.cfg.api_key_env)
        if not key:
            raise MissingApiKey(f"environment variable {self.cfg.api_key_env} is not set")
        return key

    def _client(self) -> httpx.Client:
        with self._lock:
            if self._http is None:
                self._http = httpx.Client(
                    base_url=self.cfg.base_url.rstrip("/") + "/",
                    timeout=self.cfg.timeout,
                    transport=self._transport,
                )
            return self._http

    def close(self) -> None:
        if self._http is not None:
            self._http.close()
            self._http = None

    def _post(self, path: str, body: dict) -> dict:
        key = self._key()
        http = self._client()
        headers = {"Authorization": f"Bearer {key}"}
        delay = self.cfg.backoff
        last: ServiceUnavailable | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self.delays.append(delay)
                self._sleep(delay)
                delay *= 2
            try:
                with self._slots:
                    resp = http.post(path, json=body, headers=headers)
                if resp.status_code >= 400:
                    raise HttpError(resp.status_code, resp.text)
                try:
                    return resp.json()
                except ValueError as e:
                    raise BadResponse(f"response is not JSON: {e}") from e
            except httpx.TimeoutException as e:
                last = Timeout(str(e) or "request timed out")
            except httpx.TransportError as e:
                last = ServiceUnavailable(f"transport error: {e}")
            except ServiceUnavailable as e:
                last = e
            log.warning("%s attempt %d failed: %s", path, attempt + 1, last)
        assert last is not None
        raise last

    def chat(self, prompt: str, context: Mapping[str, Any] | None = None) -> str:
        if self.mock:
            if self.responder is None:
                raise LlmError("mock mode needs a responder")
            return self.responder(prompt, context or {})
        body = {
            "model": self.cfg.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        data = self._post("chat/completions", body)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise BadResponse(f"unexpected chat response shape: {e}") from e

    def embed_remote(self, text: str) -> np.ndarray | None:
        """Service embedding of ``text``; None in mock mode, meaning "embed locally"."""
        if self.mock:
            return None
        data = self._post("embeddings", {"model": self.cfg.embedding_model_id, "input": text})
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise BadResponse(f"unexpected embedding response shape: {e}") from e
        with self._lock:
            if self.embedding_dim is None:
                self.embedding_dim = len(vec)
            elif len(vec) != self.embedding_dim:
                raise DimensionDrift(f"embedding dimension changed from {self.embedding_dim} to {len(vec)}")
        return vec


def live_config(cfg: LlmConfig) -> LlmConfig:
    return replace(cfg, mode=Mode.LIVE)
