"""Chat-completion and embedding providers.

The real client speaks the OpenAI-compatible HTTP contract. The mocks are
deterministic stand-ins used for offline campaigns and tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

from .errors import GatewayError, ScriptExhausted
from .memory import tokenize

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
ROUTE_PATTERN = re.compile(r"\[route:\s*([A-Za-z0-9_.-]+#\d+)\s*\]")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message content must be nonempty")


@dataclass
class CompletionRequest:
    model: str
    messages: list[ChatMessage]
    temperature: float | None = None
    max_output: int | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        if self.messages[0].role != "system":
            raise ValueError("the first message must be the system message")

    def payload(self) -> dict:
        body: dict = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
        }
        if self.temperature is not None:
            body["temperature"] = self.temperature
        if self.max_output is not None:
            body["max_tokens"] = self.max_output
        return body


@dataclass
class EmbeddingBatch:
    model: str
    inputs: list[str]

    def __post_init__(self) -> None:
        if not self.inputs:
            raise ValueError("an embedding batch needs at least one input")


class CompletionProvider(Protocol):
    model: str

    def complete(self, req: CompletionRequest) -> str: ...


class EmbeddingProvider(Protocol):
    model: str

    def embed(self, batch: EmbeddingBatch) -> list[list[float]]: ...


class OpenAICompatibleClient:
    """Chat completions and embeddings over an OpenAI-style REST API."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model: str = "gpt-4o-mini",
        embedding_model: str = "text-embedding-3-small",
        embedding_base_url: str | None = None,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.embedding_base_url = (embedding_base_url or base_url).rstrip("/")
        self.model = model
        self.embedding_model = embedding_model
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.retry_count = 0

    @classmethod
    def from_env(cls, model: str, embedding_model: str, **kwargs) -> "OpenAICompatibleClient":
        base = os.environ.get("LLM_BASE_URL", "https://api.openai.com/v1")
        return cls(
            base_url=base,
            api_key=os.environ.get("LLM_API_KEY"),
            model=model,
            embedding_model=embedding_model,
            embedding_base_url=os.environ.get("EMBEDDING_BASE_URL"),
            **kwargs,
        )

    def close(self) -> None:
        self._http.close()

    def _post(self, url: str, payload: dict) -> dict:
        last_error = ""
        for attempt in range(self.retries + 1):
            if attempt:
                self.retry_count += 1
                delay = self.backoff * 2 ** (attempt - 1)
                log.warning("retrying %s (attempt %d) after %s; sleeping %.1fs",
                            url, attempt + 1, last_error, delay)
                self._sleep(delay)
            try:
                resp = self._http.post(url, json=payload)
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise GatewayError(f"authentication failed ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise GatewayError(f"provider rejected request: HTTP {resp.status_code} {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise GatewayError("provider reply is not JSON") from exc
        raise GatewayError(f"giving up after {self.retries + 1} attempts: {last_error}")

    def complete(self, req: CompletionRequest) -> str:
        data = self._post(f"{self.base_url}/chat/completions", req.payload())
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError("malformed chat completion reply") from exc
        if not isinstance(text, str):
            raise GatewayError("chat completion content is not text")
        usage = data.get("usage")
        if usage:
            log.info("token usage: prompt=%s completion=%s", usage.get("prompt_tokens"),
                     usage.get("completion_tokens"))
        return text

    def embed(self, batch: EmbeddingBatch) -> list[list[float]]:
        data = self._post(f"{self.embedding_base_url}/embeddings",
                          {"model": batch.model, "input": batch.inputs})
        try:
            items = sorted(data["data"], key=lambda d: d.get("index", 0))
            vectors = [[float(x) for x in item["embedding"]] for item in items]
        except (KeyError, TypeError, ValueError) as exc:
            raise GatewayError("malformed embedding reply") from exc
        if len(vectors) != len(batch.inputs) or len({len(v) for v in vectors}) > 1:
            raise GatewayError("embedding reply has wrong shape")
        return vectors


def route_key(req: CompletionRequest) -> str | None:
    match = ROUTE_PATTERN.search(req.messages[0].content)
    return match.group(1) if match else None


@dataclass
class MockCompletionProvider:
    """Replays scripted replies keyed by the route tag in the system message.

    ``script`` maps ``agent#n`` to an ordered list of replies; each call on a
    key consumes the next reply. ``fallback`` maps a bare agent name to a reply
    returned forever for keys the script does not list.
    """

    script: dict[str, list[str]]
    fallback: dict[str, str] = field(default_factory=dict)
    model: str = "mock"
    calls: list[tuple[str, CompletionRequest]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str) -> "MockCompletionProvider":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if "replies" in data:
            return cls(script=data["replies"], fallback=data.get("fallback", {}))
        return cls(script=data)

    def complete(self, req: CompletionRequest) -> str:
        key = route_key(req)
        if key is None:
            raise GatewayError("mock provider: no route tag in system message")
        with self._lock:
            self.calls.append((key, req))
            if key in self.script:
                pos = self._cursor.get(key, 0)
                replies = self.script[key]
                if pos >= len(replies):
                    raise ScriptExhausted(f"script key {key!r} has no replies left")
                self._cursor[key] = pos + 1
                return replies[pos]
            agent = key.split("#", 1)[0]
            if agent in self.fallback:
                return self.fallback[agent]
            raise ScriptExhausted(f"script has no entry for {key!r}")

    def prompts_for(self, agent: str) -> list[CompletionRequest]:
        return [req for key, req in self.calls if key.split("#", 1)[0] == agent]


def _bucket(token: str, dimension: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dimension


@dataclass
class MockEmbeddingProvider:
    """Hashed bag-of-words embeddings, L2-normalised."""

    dimension: int = 16
    model: str = "mock-embedding"

    def __post_init__(self) -> None:
        if self.dimension < 2:
            raise ValueError("dimension must be at least 2")

    def vector(self, text: str) -> list[float]:
        vec = [0.0] * self.dimension
        tokens = tokenize(text) or [text]
        for tok in tokens:
            vec[_bucket(tok, self.dimension)] += 1.0
        norm = math.sqrt(sum(x * x for x in vec))
        return [x / norm for x in vec]

    def embed(self, batch: EmbeddingBatch) -> list[list[float]]:
        return [self.vector(text) for text in batch.inputs]
