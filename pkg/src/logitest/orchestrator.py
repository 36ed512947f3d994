"""Campaign loop: generate, execute, validate, remember, repeat until the budget is spent."""

from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import agents
from .errors import (
    EmptySpec,
    FatalSetup,
    GatewayError,
    GenerationFailed,
    MalformedDocument,
    RequestConstructionFailed,
    ScriptExhausted,
)
from .http_executor import DEFAULT_TIMEOUT, ExchangeLog, HttpExecutor
from .llm import (
    CompletionProvider,
    EmbeddingProvider,
    MockCompletionProvider,
    MockEmbeddingProvider,
    OpenAICompatibleClient,
)
from .memory import REFLECTION_CAP, TOP_K, ExecutionMemory
from .models import GeneratedRequest, HttpResponseRecord, ValidationVerdict
from .prompts import load_template
from .relationship_graph import GraphCache, build_graph, random_walk
from .reporting import (
    CrashRecord,
    IssueReport,
    RunReport,
    emit_reports,
    operation_coverage,
    response_snapshot,
    severity_candidate,
)
from .scheduler import DEFAULT_RETRY_LIMIT, ScenarioSchedule
from .spec_model import load_spec

log = logging.getLogger(__name__)

# consecutive scenario generations allowed to fail before giving up
MAX_GENERATION_FAILURES = 3
# consecutive scenarios that issued no request before giving up
MAX_IDLE_SCENARIOS = 5


@dataclass
class RunConfig:
    spec_path: str
    base_url: str
    out_dir: str = "logitest-out"
    log_dir: str | None = None
    request_budget: int = 1000
    retry_limit: int = DEFAULT_RETRY_LIMIT
    arg_threshold: float = 0.5
    walk_max: int = 10
    seed: int = 0
    use_ref_params: bool = True
    use_reflections: bool = True
    timeout: float = DEFAULT_TIMEOUT
    headers: dict[str, str] = field(default_factory=dict)
    history_limit: int = agents.HISTORY_LIMIT
    ref_param_k: int = TOP_K
    reflection_cap: int = REFLECTION_CAP
    prompts_dir: str | None = None
    memory_journal: str | None = None
    dump_arg: bool = False
    arg_cache: str | None = None
    # provider settings
    llm_model: str = "gpt-4o-mini"
    embedding_model: str = "text-embedding-3-small"
    temperature: float | None = None
    mock_llm: str | None = None

    def __post_init__(self) -> None:
        if self.request_budget < 1:
            raise ValueError("request budget must be at least 1")
        if not -1.0 < self.arg_threshold < 1.0:
            raise ValueError("ARG threshold must lie strictly between -1 and 1")
        if self.retry_limit < 0:
            raise ValueError("retry limit must be nonnegative")


def providers_for(config: RunConfig) -> tuple[CompletionProvider, EmbeddingProvider]:
    if config.mock_llm:
        return MockCompletionProvider.from_file(resolve_script(config.mock_llm)), MockEmbeddingProvider()
    client = OpenAICompatibleClient.from_env(config.llm_model, config.embedding_model)
    return client, client


def resolve_script(name: str) -> str:
    """Accept a path or the name of a bundled script such as ``petstore-e2e``."""
    if Path(name).exists():
        return name
    from importlib import resources
    bundled = resources.files("logitest").joinpath("scripts", f"{name}.json")
    if bundled.is_file():
        return str(bundled)
    raise FileNotFoundError(f"mock script {name!r} not found")


class _RunLog:
    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")

    def event(self, kind: str, **fields) -> None:
        self._fh.write(json.dumps({"event": kind, "time": time.time(), **fields}, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _fallback_verdict(response: HttpResponseRecord, reason: str) -> ValidationVerdict:
    if response.status == 500:
        return ValidationVerdict(False, "server_crash", f"server returned 500 ({reason})",
                                 issue_type="server-crash")
    return ValidationVerdict(False, "none", reason)


def run_campaign(config: RunConfig, llm: CompletionProvider | None = None,
                 embedder: EmbeddingProvider | None = None) -> RunReport:
    """Run one campaign and write its reports under ``config.out_dir``."""
    try:
        catalog = load_spec(config.spec_path)
    except (OSError, MalformedDocument, EmptySpec) as exc:
        raise FatalSetup(f"cannot load API spec: {exc}") from exc
    if llm is None or embedder is None:
        default_llm, default_embedder = providers_for(config)
        llm = llm or default_llm
        embedder = embedder or default_embedder

    out_dir = Path(config.out_dir)
    log_dir = Path(config.log_dir) if config.log_dir else out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    log_dir.mkdir(parents=True, exist_ok=True)

    try:
        templates = {name: load_template(name, config.prompts_dir)
                     for name in ("judge", "generator", "executor", "validator")}
    except (OSError, ValueError) as exc:
        raise FatalSetup(f"cannot load prompt templates: {exc}") from exc

    cache = GraphCache(config.arg_cache) if config.arg_cache else None
    try:
        graph = build_graph(catalog, embedder, llm, config.arg_threshold, cache,
                            templates["judge"], config.temperature)
    except GatewayError as exc:
        raise FatalSetup(f"relationship graph construction failed: {exc}") from exc
    if config.dump_arg:
        (out_dir / "arg.json").write_text(graph.to_json() + "\n", encoding="utf-8")

    rng = random.Random(config.seed)
    schedule = ScenarioSchedule(retry_limit=config.retry_limit)
    memory = ExecutionMemory(config.memory_journal)
    exchanges = ExchangeLog(log_dir / "exchanges.jsonl")
    run_log = _RunLog(log_dir / "run_log.jsonl")
    executor = HttpExecutor(config.base_url, config.timeout, config.headers)
    report = RunReport(request_budget=config.request_budget,
                       exchange_log=str(exchanges.path), run_log=str(run_log.path),
                       memory_journal=config.memory_journal)
    history = []
    generation_failures = 0
    idle_scenarios = 0

    try:
        while report.requests_issued < config.request_budget:
            walk = random_walk(graph, rng, config.walk_max)
            try:
                scenario = agents.generate_scenario(
                    [catalog[i] for i in walk], history, llm, catalog, rng,
                    scenario_id=len(history) + 1, template=templates["generator"],
                    history_limit=config.history_limit, temperature=config.temperature)
            except ScriptExhausted as exc:
                report.stop_reason = f"scenario generator has no more scripted replies ({exc})"
                break
            except (GenerationFailed, GatewayError) as exc:
                generation_failures += 1
                run_log.event("generation_failed", error=str(exc))
                if generation_failures >= MAX_GENERATION_FAILURES:
                    report.stop_reason = f"scenario generation failed {generation_failures} times in a row"
                    break
                continue
            generation_failures = 0
            history.append(scenario)
            report.scenarios_generated += 1
            schedule.add_scenario(scenario)
            run_log.event("scenario_start", scenario_id=scenario.scenario_id, walk=walk,
                          steps=[s.title for s in scenario.steps], warnings=scenario.warnings)

            context: list[tuple[GeneratedRequest, HttpResponseRecord]] = []
            issued_before = report.requests_issued
            last_step, last_reason = None, ""
            while not schedule.check_termination() and report.requests_issued < config.request_budget:
                step = schedule.retrieve_step()
                api = catalog[step.api]
                last_step = step
                ref_params = (memory.retrieve_parameters(api, step.description, config.ref_param_k)
                              if config.use_ref_params else None)
                reflections = (memory.retrieve_reflections(api, config.reflection_cap)
                               if config.use_reflections else None)
                try:
                    request = agents.build_request(step, api, context, ref_params, reflections, llm,
                                                   templates["executor"], config.temperature)
                except (RequestConstructionFailed, GatewayError) as exc:
                    last_reason = f"request construction failed: {exc}"
                    run_log.event("request_failed", scenario_id=scenario.scenario_id,
                                  step=step.title, error=str(exc))
                    schedule.update_status("failed")
                    continue

                response = executor(request)
                report.requests_issued += 1
                seq = exchanges.record_exchange(request, response, scenario_id=scenario.scenario_id,
                                                step_title=step.title)
                if response.transport_error:
                    verdict = ValidationVerdict(False, "none",
                                                f"transport error: {response.transport_error}")
                else:
                    try:
                        verdict = agents.validate_response(step, api, request, response, llm, context,
                                                           templates["validator"], config.temperature)
                    except GatewayError as exc:
                        verdict = _fallback_verdict(response, f"validator unavailable: {exc}")

                memory.insert_execution(api, step, request, verdict)
                if verdict.issue_kind == "logical_issue":
                    report.raw_issues.append(IssueReport(
                        api=api.id, issue_type=verdict.issue_type,
                        severity=severity_candidate(verdict.severity),
                        explanation=verdict.explanation, request=request.to_dict(),
                        response=response_snapshot(response), scenario_id=scenario.scenario_id,
                        step_title=step.title, exchange_seq=seq))
                elif verdict.issue_kind == "server_crash":
                    report.raw_crashes.append(CrashRecord(
                        api=api.id, response_body=response.body, request=request.to_dict(),
                        scenario_id=scenario.scenario_id, step_title=step.title, exchange_seq=seq))
                context.append((request, response))
                last_reason = verdict.explanation
                schedule.update_status("passed" if verdict.aligned else "failed")

            if schedule.failed:
                report.scenarios_failed += 1
                run_log.event("scenario_failed", scenario_id=scenario.scenario_id,
                              failing_step=last_step.title if last_step else None,
                              reflection=last_reason)
            elif schedule.check_termination():
                report.scenarios_completed += 1
                run_log.event("scenario_completed", scenario_id=scenario.scenario_id)
            else:
                run_log.event("scenario_interrupted", scenario_id=scenario.scenario_id,
                              remaining_steps=len(schedule.steps))

            if report.requests_issued == issued_before:
                idle_scenarios += 1
                if idle_scenarios >= MAX_IDLE_SCENARIOS:
                    report.stop_reason = f"{idle_scenarios} scenarios in a row issued no request"
                    break
            else:
                idle_scenarios = 0
        else:
            report.stop_reason = "request budget exhausted"
    finally:
        executor.close()
        exchanges.close()
        memory.close()
        run_log.event("campaign_end", requests=report.requests_issued, reason=report.stop_reason)
        run_log.close()

    report.coverage = operation_coverage(exchanges.entries, catalog)
    emit_reports(report, out_dir)
    return report
