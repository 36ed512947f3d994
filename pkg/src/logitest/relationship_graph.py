"""API relationship graph: embedding pre-filter, LLM judging, random walks."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import GatewayError, LengthMismatch, ZeroVector
from .llm import CompletionProvider, CompletionRequest, EmbeddingBatch, EmbeddingProvider
from .prompts import PromptTemplate, load_template
from .spec_model import ApiCatalog, ApiOperation, description_text, render_markdown

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
MAX_WALK = 10
JUDGE_ATTEMPTS = 2

_VERDICT_RE = re.compile(r"\b(NOT[\s_-]+RELATED|UNRELATED|RELATED)\b", re.IGNORECASE)


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise LengthMismatch(f"vectors of length {len(a)} and {len(b)}")
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    value = sum(x * y for x, y in zip(a, b)) / (na * nb)
    return max(-1.0, min(1.0, value))


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


class GraphCache:
    """On-disk memo of embeddings and pair judgments keyed by content hash."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.embeddings: dict[str, list[float]] = {}
        self.judgments: dict[str, bool] = {}
        if self.path.exists():
            data = json.loads(self.path.read_text(encoding="utf-8"))
            self.embeddings = data.get("embeddings", {})
            self.judgments = data.get("judgments", {})

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"embeddings": self.embeddings, "judgments": self.judgments},
                                  sort_keys=True), encoding="utf-8")
        tmp.replace(self.path)


def embed_catalog(catalog: ApiCatalog, embedder: EmbeddingProvider,
                  cache: GraphCache | None = None) -> list[list[float]]:
    texts = [description_text(op) or op.key for op in catalog]
    model = getattr(embedder, "model", "")
    keys = [_digest("embed", model, t) for t in texts]
    missing = [i for i, k in enumerate(keys) if cache is None or k not in cache.embeddings]
    fresh: dict[int, list[float]] = {}
    if missing:
        try:
            vectors = embedder.embed(EmbeddingBatch(model, [texts[i] for i in missing]))
        except GatewayError:
            raise
        except Exception as exc:
            raise GatewayError(f"embedding provider failed: {exc}") from exc
        if len(vectors) != len(missing):
            raise GatewayError("embedding provider returned the wrong number of vectors")
        fresh = dict(zip(missing, vectors))
        if cache is not None:
            for i, vec in fresh.items():
                cache.embeddings[keys[i]] = list(vec)
    out = [fresh[i] if i in fresh else cache.embeddings[keys[i]] for i in range(len(texts))]
    if len({len(v) for v in out}) > 1:
        raise GatewayError("embedding vectors differ in length")
    return out


def candidate_pairs(catalog: ApiCatalog, embedder: EmbeddingProvider,
                    threshold: float = DEFAULT_THRESHOLD,
                    cache: GraphCache | None = None) -> list[tuple[str, str]]:
    """Pairs (i < j in catalog order) whose cosine similarity strictly exceeds ``threshold``."""
    vectors = embed_catalog(catalog, embedder, cache)
    ops = catalog.operations
    pairs = []
    for i in range(len(ops)):
        for j in range(i + 1, len(ops)):
            if cosine_similarity(vectors[i], vectors[j]) > threshold:
                pairs.append((ops[i].id, ops[j].id))
    return pairs


def parse_relationship(reply: str) -> bool | None:
    match = _VERDICT_RE.search(reply)
    if match is None:
        return None
    return match.group(1).upper() == "RELATED"


def judge_relationship(pair: tuple[ApiOperation, ApiOperation], llm: CompletionProvider,
                       template: PromptTemplate | None = None, temperature: float | None = None,
                       ) -> bool:
    template = template or load_template("judge")
    a, b = pair
    for attempt in range(1, JUDGE_ATTEMPTS + 1):
        messages = template.messages(f"judge#{attempt}", api_a=render_markdown(a),
                                     api_b=render_markdown(b))
        reply = llm.complete(CompletionRequest(getattr(llm, "model", ""), messages, temperature))
        verdict = parse_relationship(reply)
        if verdict is not None:
            return verdict
    log.warning("unparseable relationship verdict for %s / %s; treating as unrelated", a.id, b.id)
    return False


@dataclass
class ApiRelationshipGraph:
    nodes: dict[str, dict] = field(default_factory=dict)
    adjacency: dict[str, set[str]] = field(default_factory=dict)

    def add_node(self, op: ApiOperation) -> None:
        self.nodes[op.id] = {"method": op.method, "path": op.path,
                             "markdown": render_markdown(op)}
        self.adjacency.setdefault(op.id, set())

    def add_edge(self, a: str, b: str) -> None:
        if a == b:
            raise ValueError("self-loops are not allowed")
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)

    def has_edge(self, a: str, b: str) -> bool:
        return b in self.adjacency.get(a, ())

    def degree(self, node: str) -> int:
        return len(self.adjacency[node])

    def neighbors(self, node: str) -> list[str]:
        # node-insertion order keeps walks reproducible across runs
        adj = self.adjacency[node]
        return [n for n in self.nodes if n in adj]

    def edges(self) -> list[tuple[str, str]]:
        order = {n: i for i, n in enumerate(self.nodes)}
        out = []
        for a in self.nodes:
            for b in self.neighbors(a):
                if order[a] < order[b]:
                    out.append((a, b))
        return out

    def to_json(self) -> str:
        return json.dumps({"nodes": {n: {"method": attrs["method"], "path": attrs["path"]}
                                     for n, attrs in self.nodes.items()},
                           "adjacency": {n: self.neighbors(n) for n in self.nodes}},
                          indent=2)


def build_graph(catalog: ApiCatalog, embedder: EmbeddingProvider, llm: CompletionProvider,
                threshold: float = DEFAULT_THRESHOLD, cache: GraphCache | None = None,
                template: PromptTemplate | None = None,
                temperature: float | None = None) -> ApiRelationshipGraph:
    graph = ApiRelationshipGraph()
    for op in catalog:
        graph.add_node(op)
    if len(catalog) < 2:
        return graph

    template = template or load_template("judge")
    for a_id, b_id in candidate_pairs(catalog, embedder, threshold, cache):
        a, b = catalog[a_id], catalog[b_id]
        key = _digest("judge", getattr(llm, "model", ""), render_markdown(a), render_markdown(b))
        if cache is not None and key in cache.judgments:
            related = cache.judgments[key]
        else:
            related = judge_relationship((a, b), llm, template, temperature)
            if cache is not None:
                cache.judgments[key] = related
        if related:
            graph.add_edge(a_id, b_id)

    isolated = [n for n in graph.nodes if graph.degree(n) == 0]
    for node in isolated:
        for other in graph.nodes:
            if other != node:
                graph.add_edge(node, other)
    if cache is not None:
        cache.save()
    return graph


def random_walk(graph: ApiRelationshipGraph, rng: random.Random,
                max_len: int = MAX_WALK) -> list[str]:
    """Walk without revisits from a uniformly chosen start node."""
    if not graph.nodes:
        raise ValueError("cannot walk an empty graph")
    current = rng.choice(list(graph.nodes))
    walk = [current]
    visited = {current}
    while len(walk) < max_len:
        options = [n for n in graph.neighbors(current) if n not in visited]
        if not options:
            break
        current = rng.choice(options)
        walk.append(current)
        visited.add(current)
    return walk
