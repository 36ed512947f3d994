"""Long-term execution memory.

Passed requests leave parameter name/value records that later steps can
borrow; failed ones leave per-API reflections. Parameter records are
ranked with BM25 against the current operation and step description.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable

from .models import GeneratedRequest, TestStep, ValidationVerdict
from .spec_model import ApiOperation, description_text

K1 = 1.2
B = 0.75
TOP_K = 10
REFLECTION_CAP = 5

AUTH_HEADERS = frozenset({
    "authorization", "proxy-authorization", "cookie", "x-api-key", "api-key", "api_key",
    "x-auth-token",
})

_CAMEL_LOWER_UPPER = re.compile(r"([a-z0-9])([A-Z])")
_CAMEL_ACRONYM = re.compile(r"([A-Z]+)([A-Z][a-z])")
_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def tokenize(text: str) -> list[str]:
    text = _CAMEL_ACRONYM.sub(r"\1 \2", text)
    text = _CAMEL_LOWER_UPPER.sub(r"\1 \2", text)
    return [t for t in _NON_ALNUM.split(text.lower()) if len(t) >= 2]


@dataclass
class CorpusStats:
    n_docs: int = 0
    total_length: int = 0
    df: Counter = field(default_factory=Counter)

    @property
    def avgdl(self) -> float:
        return self.total_length / self.n_docs if self.n_docs else 0.0

    def add(self, tokens: list[str]) -> None:
        self.n_docs += 1
        self.total_length += len(tokens)
        self.df.update(set(tokens))

    @classmethod
    def from_documents(cls, docs: Iterable[list[str]]) -> "CorpusStats":
        stats = cls()
        for tokens in docs:
            stats.add(tokens)
        return stats

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def bm25_score(query_tokens: list[str], doc_tokens: list[str], stats: CorpusStats,
               k1: float = K1, b: float = B, tf: Counter | None = None,
               idf: dict[str, float] | None = None) -> float:
    """BM25 of one document; ``tf`` and ``idf`` may be passed in precomputed."""
    if not query_tokens or not doc_tokens:
        return 0.0
    tf = Counter(doc_tokens) if tf is None else tf
    avgdl = stats.avgdl or 1.0
    norm = k1 * (1.0 - b + b * len(doc_tokens) / avgdl)
    score = 0.0
    for term in query_tokens:
        f = tf.get(term, 0)
        if f:
            weight = idf[term] if idf is not None else stats.idf(term)
            score += weight * f * (k1 + 1.0) / (f + norm)
    return score


@dataclass
class ParameterRecord:
    param_name: str
    param_value: str
    source_api: str
    doc_text: str
    timestamp: int

    def __post_init__(self) -> None:
        if not self.param_name or not self.doc_text:
            raise ValueError("parameter records need a name and document text")
        self.tokens = tokenize(self.doc_text)
        self.tf = Counter(self.tokens)


@dataclass
class ReflectionRecord:
    api_key: str
    request_detail: str
    failure_explanation: str
    timestamp: int = 0


def _stringify(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True)


def _flatten(value: Any, prefix: str) -> Iterable[tuple[str, Any]]:
    if isinstance(value, dict):
        for key, sub in value.items():
            name = f"{prefix}.{key}" if prefix else str(key)
            yield from _flatten(sub, name)
    else:
        yield prefix or "body", value


def request_parameters(request: GeneratedRequest) -> list[tuple[str, str]]:
    """Name/value pairs carried by a request, body fields flattened with dots."""
    pairs: list[tuple[str, str]] = []
    for name, value in request.path_values.items():
        pairs.append((name, _stringify(value)))
    for name, value in request.query_values.items():
        pairs.append((name, _stringify(value)))
    for name, value in request.header_values.items():
        if name.lower() not in AUTH_HEADERS:
            pairs.append((name, _stringify(value)))
    if request.body is not None:
        pairs.extend((name, _stringify(v)) for name, v in _flatten(request.body, ""))
    return pairs


class ExecutionMemory:
    def __init__(self, journal_path: str | None = None, k1: float = K1, b: float = B):
        self.parameter_records: list[ParameterRecord] = []
        self.reflections: dict[str, list[ReflectionRecord]] = {}
        self.stats = CorpusStats()
        self.k1 = k1
        self.b = b
        self._clock = 0
        self._journal = open(journal_path, "w", encoding="utf-8") if journal_path else None

    def close(self) -> None:
        if self._journal:
            self._journal.close()
            self._journal = None

    def __len__(self) -> int:
        return len(self.parameter_records) + sum(len(v) for v in self.reflections.values())

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    def _write(self, kind: str, record: Any) -> None:
        if self._journal is None:
            return
        self._journal.write(json.dumps({"kind": kind, **asdict(record)}, sort_keys=True) + "\n")
        self._journal.flush()

    def add_parameter(self, name: str, value: str, source_api: str, doc_text: str) -> ParameterRecord:
        record = ParameterRecord(name, value, source_api, doc_text, self._tick())
        self.parameter_records.append(record)
        self.stats.add(record.tokens)
        self._write("parameter", record)
        return record

    def add_reflection(self, api_key: str, request_detail: str, explanation: str) -> ReflectionRecord:
        record = ReflectionRecord(api_key, request_detail, explanation, self._tick())
        self.reflections.setdefault(api_key, []).append(record)
        self._write("reflection", record)
        return record

    def insert_execution(self, api: ApiOperation, step: TestStep, request: GeneratedRequest,
                         verdict: ValidationVerdict) -> None:
        if verdict.aligned:
            doc_text = " ".join(t for t in (description_text(api), step.description) if t)
            doc_text = doc_text or api.key
            for name, value in request_parameters(request):
                self.add_parameter(name, value, api.id, doc_text)
        else:
            self.add_reflection(api.id, request.to_json(), verdict.explanation)

    def score_all(self, api: ApiOperation, step_description: str) -> list[tuple[float, ParameterRecord]]:
        query = tokenize(f"{description_text(api)} {step_description}")
        idf = {term: self.stats.idf(term) for term in set(query)}
        return [(bm25_score(query, r.tokens, self.stats, self.k1, self.b, r.tf, idf), r)
                for r in self.parameter_records]

    def retrieve_parameters(self, api: ApiOperation, step_description: str,
                            k: int = TOP_K) -> list[tuple[str, str]]:
        scored = self.score_all(api, step_description)
        scored.sort(key=lambda pair: (-pair[0], -pair[1].timestamp))
        return [(r.param_name, r.param_value) for _, r in scored[:k]]

    def retrieve_reflections(self, api: ApiOperation, limit: int | None = REFLECTION_CAP
                             ) -> list[ReflectionRecord]:
        records = list(reversed(self.reflections.get(api.id, [])))
        return records if limit is None else records[:limit]
