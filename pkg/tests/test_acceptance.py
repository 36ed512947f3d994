"""Acceptance suite: one test per criterion, reported as PASS/FAIL/SKIP lines."""

import itertools
import json
import os
import random
import time
from pathlib import Path

import pytest

from logitest.llm import MockCompletionProvider, MockEmbeddingProvider
from logitest.memory import ExecutionMemory
from logitest.models import TestScenario, TestStep
from logitest.orchestrator import RunConfig, resolve_script, run_campaign
from logitest.relationship_graph import build_graph, candidate_pairs, random_walk
from logitest.reporting import (
    CrashRecord,
    IssueReport,
    dedup_crashes,
    dedup_issues,
    normalize_body,
    operation_coverage,
)
from logitest.scheduler import ScenarioSchedule
from logitest.spec_model import ApiCatalog, ApiOperation

from oracles import ReferenceSchedule, reference_bm25
from scripting import happy_path_script

E2E = "petstore-e2e"


def e2e_llm():
    return MockCompletionProvider.from_file(resolve_script(E2E))


def campaign(out, spec_file, url, llm=None, **kw):
    cfg = RunConfig(spec_path=spec_file, base_url=url, out_dir=str(out), **kw)
    return run_campaign(cfg, llm or e2e_llm(), MockEmbeddingProvider())


# 1 -----------------------------------------------------------------------------

def test_criterion_1_motivating_example(tmp_path, spec_file, petstore):
    started = time.perf_counter()
    report = campaign(tmp_path, spec_file, petstore.url, request_budget=60)
    elapsed = time.perf_counter() - started

    issues = [json.loads(line) for line in (tmp_path / "issues.jsonl").read_text().splitlines()]
    crashes = [json.loads(line) for line in (tmp_path / "crashes.jsonl").read_text().splitlines()]
    found = {(i["api"], i["issue_type"]) for i in issues}
    detections = [
        ("POST /pet", "wrong-status-code") in found,           # B1
        ("POST /pet", "invalid-data-accepted") in found,       # B2
        ("POST /order", "dangling-reference") in found,        # B3
        [c["api"] for c in crashes] == ["GET /pet/{petId}"],   # B4
    ]
    assert sum(detections) == 4, (found, crashes)
    keys = [(i["api"], i["issue_type"]) for i in issues]
    assert len(keys) == len(set(keys)), "duplicate issue reports"
    assert len(crashes) == 1
    assert report.requests_issued <= 60
    assert elapsed < 10.0


# 2 -----------------------------------------------------------------------------

def _explore(n_steps: int, prefix: list[bool], max_len: int, counter: list[int]) -> None:
    """Depth-first over outcome sequences; a branch ends once both machines terminate."""
    steps = [TestStep(f"s{i}", "GET /x", "", "200") for i in range(n_steps)]
    sched = ScenarioSchedule(retry_limit=3).add_scenario(TestScenario(1, steps))
    ref = ReferenceSchedule(n_steps, limit=3)
    for passed in prefix:
        sched.update_status("passed" if passed else "failed")
        ref.feed(passed)
    counter[0] += 1
    assert sched.check_termination() == ref.done()
    assert sched.failed == ref.failed
    assert [s.step.title for s in sched.steps] == [name for name, _ in ref.queue]
    assert [s.retry for s in sched.steps] == [r for _, r in ref.queue]
    if ref.done():
        # trailing outcomes of a longer sequence are never consumed
        return
    assert sched.retrieve_step().title == ref.head()
    assert sched.steps[sched.pointer].step.title == ref.head()
    if len(prefix) == max_len:
        return
    for passed in (True, False):
        _explore(n_steps, prefix + [passed], max_len, counter)


def test_criterion_2_scheduler_model_check():
    started = time.perf_counter()
    visited = [0]
    for n_steps in range(1, 5):
        _explore(n_steps, [], 20, visited)
    # a literal enumeration for short sequences as a cross-check of the pruning
    for n_steps in range(1, 5):
        for outcomes in itertools.product((True, False), repeat=10):
            steps = [TestStep(f"s{i}", "GET /x", "", "200") for i in range(n_steps)]
            sched = ScenarioSchedule().add_scenario(TestScenario(1, steps))
            ref = ReferenceSchedule(n_steps)
            for passed in outcomes:
                if ref.done():
                    break
                sched.update_status("passed" if passed else "failed")
                ref.feed(passed)
            assert sched.check_termination() == ref.done() and sched.failed == ref.failed
    # nodes per tree: T(n) = 5 + 4 T(n-1), T(0) = 1 (four attempts per step, each passing or not)
    trees, t = [], 1
    for _ in range(4):
        t = 5 + 4 * t
        trees.append(t)
    assert visited[0] == sum(trees) == 900
    assert time.perf_counter() - started < 5.0


# 3 -----------------------------------------------------------------------------

VOCAB = ["pet", "order", "user", "name", "status", "id", "photo", "url", "quantity", "token",
         "login", "category", "available", "sold", "create", "delete", "find", "store"]


def test_criterion_3_bm25_oracle():
    bare = ApiOperation(id="GET /q", method="GET", path="/q")
    for seed in range(200):
        rng = random.Random(seed)
        n_records = rng.randint(1, 50)
        docs = [[rng.choice(VOCAB) for _ in range(rng.randint(1, 12))] for _ in range(n_records)]
        query = [rng.choice(VOCAB) for _ in range(rng.randint(1, 8))]
        mem = ExecutionMemory()
        for i, doc in enumerate(docs):
            mem.add_parameter(f"p{i}", str(i), "x", " ".join(doc))

        scores = [reference_bm25(query, i, docs) for i in range(n_records)]
        got_scores = [s for s, _ in mem.score_all(bare, " ".join(query))]
        assert all(abs(a - b) < 1e-9 for a, b in zip(got_scores, scores)), seed

        expected = sorted(range(n_records), key=lambda i: (-scores[i], -i))[:10]
        got = [int(v) for _, v in mem.retrieve_parameters(bare, " ".join(query))]
        assert len(got) == min(10, n_records)
        assert got == expected, seed


# 4 -----------------------------------------------------------------------------

class _Embedder:
    model = "random"

    def __init__(self, vectors):
        self.vectors = vectors

    def embed(self, batch):
        return [self.vectors[text] for text in batch.inputs]


class _Judge:
    model = "random-judge"

    def __init__(self, rng):
        self.rng = rng

    def complete(self, req):
        return "RELATED" if self.rng.random() < 0.4 else "UNRELATED"


def test_criterion_4_arg_properties():
    eps = 1e-9
    for seed in range(50):
        rng = random.Random(seed)
        n = rng.randint(1, 15)
        ops = [ApiOperation(id=f"GET /c{seed}/r{i}", method="GET", path=f"/c{seed}/r{i}",
                            summary=f"op{i}") for i in range(n)]
        catalog = ApiCatalog("random", "", ops)
        vectors = {f"op{i}": [rng.uniform(-1, 1) for _ in range(6)] for i in range(n)}
        graph = build_graph(catalog, _Embedder(vectors), _Judge(rng))

        for node, adj in graph.adjacency.items():
            assert node not in adj
            if n >= 2:
                assert len(adj) >= 1
            assert all(node in graph.adjacency[other] for other in adj)

        walk_rng = random.Random(1000 + seed)
        for _ in range(1000):
            walk = random_walk(graph, walk_rng)
            assert 1 <= len(walk) <= 10
            assert len(set(walk)) == len(walk)
            assert all(graph.has_edge(a, b) for a, b in zip(walk, walk[1:]))

        embedder = _Embedder(vectors)
        assert candidate_pairs(catalog, embedder, 1.0 + eps) == []
        assert len(candidate_pairs(catalog, embedder, -1.0 - eps)) == n * (n - 1) // 2
        sizes = [len(candidate_pairs(catalog, embedder, t)) for t in (-0.5, 0.0, 0.5, 0.9)]
        assert sizes == sorted(sizes, reverse=True)


# 5 -----------------------------------------------------------------------------

def test_criterion_5_budget_and_determinism(tmp_path, spec_file, petstore):
    outputs = []
    for run in ("a", "b"):
        petstore.reset()
        campaign(tmp_path / run, spec_file, petstore.url, seed=11)
        outputs.append([(tmp_path / run / name).read_bytes() for name in ("issues.jsonl", "coverage.json")])
    assert outputs[0] == outputs[1]

    for budget in (1, 7, 19, 26, 60):
        petstore.reset()
        report = campaign(tmp_path / f"b{budget}", spec_file, petstore.url, request_budget=budget)
        logged = (tmp_path / f"b{budget}" / "exchanges.jsonl").read_text().splitlines()
        assert report.requests_issued == len(logged) <= budget

    petstore.reset()
    script = happy_path_script(600)
    llm = MockCompletionProvider(script["replies"], script["fallback"])
    started = time.perf_counter()
    report = campaign(tmp_path / "big", spec_file, petstore.url, llm=llm, request_budget=1000)
    elapsed = time.perf_counter() - started
    assert report.requests_issued == 1000
    assert report.stop_reason == "request budget exhausted"
    assert elapsed < 60.0, elapsed


# 6 -----------------------------------------------------------------------------

def test_criterion_6_dedup_contracts():
    apis = ["POST /pet", "GET /pet/{petId}", "POST /order"]
    types = ["wrong-status-code", "Wrong-Status-Code", "schema-mismatch", "other", ""]
    bodies = ["boom", "boom  ", "Error at 2024-01-01T00:00:00Z", "Error at 2025-02-02T11:11:11Z", "bang"]
    for seed in range(100):
        rng = random.Random(seed)
        issues = [IssueReport(rng.choice(apis), rng.choice(types), "unclassified", f"e{i}", exchange_seq=i)
                  for i in range(rng.randint(0, 40))]
        crashes = [CrashRecord(rng.choice(apis), rng.choice(bodies), exchange_seq=i)
                   for i in range(rng.randint(0, 40))]

        once = dedup_issues(issues)
        keys = [(r.api, r.issue_type) for r in once]
        assert len(keys) == len(set(keys))
        assert set(keys) == {(r.api, r.issue_type) for r in issues}
        assert dedup_issues(once) == once

        conce = dedup_crashes(crashes)
        ckeys = [(c.api, normalize_body(c.response_body)) for c in conce]
        assert len(ckeys) == len(set(ckeys))
        assert set(ckeys) == {(c.api, normalize_body(c.response_body)) for c in crashes}
        assert dedup_crashes(conce) == conce


# 7 -----------------------------------------------------------------------------

def test_criterion_7_coverage(tmp_path, spec_file, petstore, catalog):
    report = campaign(tmp_path, spec_file, petstore.url)
    assert (report.coverage.covered_operations, report.coverage.total_operations) == (9, 9)
    saved = json.loads((tmp_path / "coverage.json").read_text())
    assert saved["covered_operations"] == 9

    not_found = [{"api": op.id, "response": {"status": 404}} for op in catalog for _ in range(3)]
    cov = operation_coverage(not_found, catalog)
    assert (cov.covered_operations, cov.total_operations) == (0, 9)


# 8 -----------------------------------------------------------------------------

def test_criterion_8_ablation_flags(tmp_path, spec_file, petstore):
    def executor_prompts(**flags):
        petstore.reset()
        llm = e2e_llm()
        campaign(tmp_path / str(len(os.listdir(tmp_path))), spec_file, petstore.url, llm=llm, **flags)
        return [r.messages[1].content for r in llm.prompts_for("executor")]

    no_ref = executor_prompts(use_ref_params=False)
    assert no_ref and not any("## Reference parameters" in p for p in no_ref)
    assert any("## Failure reflections" in p for p in no_ref)

    no_refl = executor_prompts(use_reflections=False)
    assert no_refl and not any("## Failure reflections" in p for p in no_refl)
    assert any("## Reference parameters" in p for p in no_refl)

    default = executor_prompts()
    # the first prompt precedes any memory write; every later one has both sections
    assert all("## Reference parameters" in p and "## Failure reflections" in p for p in default[1:])
    assert any("- " in p.split("## Reference parameters", 1)[1] and "(no stored values yet)" not in p
               for p in default)


# 9 -----------------------------------------------------------------------------

LIVE = bool(os.environ.get("LLM_API_KEY") and os.environ.get("LLM_BASE_URL"))


@pytest.mark.live
@pytest.mark.skipif(not LIVE, reason="set LLM_API_KEY and LLM_BASE_URL for the live smoke test")
def test_criterion_9_live_smoke(tmp_path, spec_file, petstore):
    cfg = RunConfig(spec_path=spec_file, base_url=petstore.url, out_dir=str(tmp_path), request_budget=30,
                    llm_model=os.environ.get("LLM_MODEL", "gpt-4o-mini"),
                    embedding_model=os.environ.get("EMBEDDING_MODEL", "text-embedding-3-small"))
    report = run_campaign(cfg)
    assert report.requests_issued <= 30
    for name in ("issues.jsonl", "crashes.jsonl"):
        for line in Path(tmp_path, name).read_text().splitlines():
            json.loads(line)
    coverage = json.loads(Path(tmp_path, "coverage.json").read_text())
    assert coverage["total_operations"] == 9
