"""do_request: put a generated request on the wire and capture the outcome."""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Any, Iterator
from urllib.parse import quote

import httpx

from .models import GeneratedRequest, HttpResponseRecord

DEFAULT_TIMEOUT = 30.0
MAX_REDIRECTS = 3


def _scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    return str(value)


def build_url(request: GeneratedRequest, base_url: str) -> str:
    path = request.path
    for name, value in request.path_values.items():
        path = path.replace("{" + name + "}", quote(_scalar(value), safe=""))
    if "{" in path and "}" in path:
        raise ValueError(f"unfilled path variables in {path}")
    return base_url.rstrip("/") + path


def _query_params(request: GeneratedRequest) -> list[tuple[str, str]]:
    params = []
    for name, value in request.query_values.items():
        if value is None:
            continue
        if isinstance(value, list):
            params.extend((name, _scalar(v)) for v in value)
        else:
            params.append((name, _scalar(value)))
    return params


def do_request(request: GeneratedRequest, base_url: str, timeout: float = DEFAULT_TIMEOUT,
               extra_headers: dict[str, str] | None = None,
               client: httpx.Client | None = None) -> HttpResponseRecord:
    """Send ``request``; transport failures come back as data, never as exceptions."""
    started = time.perf_counter()

    def elapsed() -> float:
        return (time.perf_counter() - started) * 1000.0

    try:
        url = build_url(request, base_url)
        headers = {k: _scalar(v) for k, v in (extra_headers or {}).items()}
        headers.update({k: _scalar(v) for k, v in request.header_values.items()})
        content = None
        if request.body is not None:
            content = json.dumps(request.body).encode("utf-8")
            headers.setdefault("Content-Type", "application/json")
        own = client is None
        if own:
            client = httpx.Client(follow_redirects=True, max_redirects=MAX_REDIRECTS)
        try:
            resp = client.request(request.method, url, params=_query_params(request) or None,
                                  headers=headers, content=content, timeout=timeout)
        finally:
            if own:
                client.close()
    except Exception as exc:  # noqa: BLE001 - totality: every failure becomes a record
        return HttpResponseRecord(transport_error=f"{type(exc).__name__}: {exc}",
                                  latency_ms=elapsed())
    return HttpResponseRecord(status=resp.status_code, headers=dict(resp.headers),
                              body=resp.text, latency_ms=elapsed())


class HttpExecutor:
    """Reusable connection pool around :func:`do_request`."""

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT,
                 headers: dict[str, str] | None = None):
        self.base_url = base_url
        self.timeout = timeout
        self.headers = dict(headers or {})
        self._client = httpx.Client(follow_redirects=True, max_redirects=MAX_REDIRECTS)

    def __call__(self, request: GeneratedRequest) -> HttpResponseRecord:
        return do_request(request, self.base_url, self.timeout, self.headers, self._client)

    def close(self) -> None:
        self._client.close()


class ExchangeLog:
    """Append-only JSONL log of request/response exchanges."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: list[dict] = []
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.entries)

    def record_exchange(self, request: GeneratedRequest, response: HttpResponseRecord,
                        **context: Any) -> int:
        seq = len(self.entries) + 1
        entry = {
            "seq": seq,
            "timestamp": time.time(),
            "api": request.api,
            **context,
            "request": request.to_dict(),
            "response": response.to_dict(),
        }
        self.entries.append(entry)
        if self._fh is not None:
            self._fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self._fh.flush()
        return seq

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def record_exchange(log: ExchangeLog, request: GeneratedRequest, response: HttpResponseRecord,
                    **context: Any) -> int:
    return log.record_exchange(request, response, **context)


def read_exchanges(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
