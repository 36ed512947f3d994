"""The scenario generator, request executor and response validator agents.

Each agent fills its prompt template, calls the completion provider, and
parses a single fenced JSON object out of the reply. Malformed replies are
re-asked a bounded number of times.
"""

from __future__ import annotations

import json
import logging
import random
import re
from typing import Any, Sequence

from .errors import GenerationFailed, ParseFailure, RequestConstructionFailed
from .llm import ChatMessage, CompletionProvider, CompletionRequest
from .memory import ReflectionRecord
from .models import (
    ISSUE_KINDS,
    GeneratedRequest,
    HttpResponseRecord,
    TestScenario,
    TestStep,
    ValidationVerdict,
)
from .prompts import PromptTemplate, load_template
from .spec_model import ApiCatalog, ApiOperation, render_markdown

log = logging.getLogger(__name__)

MAX_STEPS = 15
HISTORY_LIMIT = 10
SCENARIO_REASKS = 1
REQUEST_REASKS = 2
VERDICT_REASKS = 2
BODY_PREVIEW = 2000

_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\r?\n(.*?)```", re.DOTALL)


# --- structured reply parsing -------------------------------------------------

def _need_str(obj: dict, key: str, nonempty: bool = False) -> str:
    value = obj.get(key, "")
    if value is None:
        value = ""
    if not isinstance(value, str):
        raise ValueError(f"field {key!r} must be a string")
    if nonempty and not value.strip():
        raise ValueError(f"field {key!r} must be nonempty")
    return value.strip()


def _check_scenario(obj: Any) -> dict:
    if not isinstance(obj, dict) or not isinstance(obj.get("steps"), list):
        raise ValueError("expected an object with a 'steps' list")
    steps = obj["steps"]
    if not 1 <= len(steps) <= MAX_STEPS:
        raise ValueError(f"scenario must have 1..{MAX_STEPS} steps, got {len(steps)}")
    out = []
    for i, step in enumerate(steps, 1):
        if not isinstance(step, dict):
            raise ValueError(f"step {i} is not an object")
        out.append({
            "title": _need_str(step, "title", nonempty=True),
            "api": _need_str(step, "api", nonempty=True),
            "description": _need_str(step, "description"),
            "expected_response": _need_str(step, "expected_response", nonempty=True),
        })
    return {"steps": out}


def _check_map(obj: dict, key: str, allow_lists: bool = False) -> dict:
    value = obj.get(key) or {}
    if not isinstance(value, dict):
        raise ValueError(f"field {key!r} must be an object")
    for name, item in value.items():
        ok = item is None or isinstance(item, (str, int, float, bool))
        if allow_lists and isinstance(item, list):
            ok = all(isinstance(v, (str, int, float, bool)) for v in item)
        if not ok:
            raise ValueError(f"{key}.{name} must be a scalar")
    return dict(value)


def _check_request(obj: Any) -> dict:
    keys = ("path_values", "query_values", "header_values", "body")
    if not isinstance(obj, dict) or not any(k in obj for k in keys):
        raise ValueError(f"expected an object with some of {', '.join(keys)}")
    return {
        "path_values": _check_map(obj, "path_values"),
        "query_values": _check_map(obj, "query_values", allow_lists=True),
        "header_values": _check_map(obj, "header_values"),
        "body": obj.get("body"),
    }


def _check_verdict(obj: Any) -> dict:
    if not isinstance(obj, dict) or not isinstance(obj.get("aligned"), bool):
        raise ValueError("expected an object with a boolean 'aligned'")
    aligned = obj["aligned"]
    kind = _need_str(obj, "issue_kind") or ("none" if aligned else "logical_issue")
    if kind not in ISSUE_KINDS:
        raise ValueError(f"issue_kind must be one of {', '.join(ISSUE_KINDS)}")
    if aligned and kind != "none":
        raise ValueError("aligned verdicts must have issue_kind 'none'")
    explanation = _need_str(obj, "explanation", nonempty=not aligned)
    return {
        "aligned": aligned,
        "issue_kind": kind,
        "explanation": explanation,
        "minor_notes": _need_str(obj, "minor_notes"),
        "issue_type": _need_str(obj, "issue_type"),
        "severity": _need_str(obj, "severity"),
    }


_CHECKERS = {"scenario": _check_scenario, "request": _check_request, "verdict": _check_verdict}


def parse_structured_reply(reply: str, kind: str) -> dict:
    """Return the first fenced JSON block in ``reply`` that satisfies ``kind``'s schema."""
    check = _CHECKERS[kind]
    problems = []
    blocks = _FENCE_RE.findall(reply or "")
    if not blocks:
        raise ParseFailure(kind, "no fenced JSON block in reply")
    for lang, body in blocks:
        if lang and lang.lower() not in ("json", "json5"):
            problems.append(f"skipped ```{lang} block")
            continue
        try:
            return check(json.loads(body))
        except json.JSONDecodeError as exc:
            problems.append(f"invalid JSON ({exc.msg})")
        except (ValueError, TypeError) as exc:
            problems.append(str(exc))
    raise ParseFailure(kind, "; ".join(problems))


# --- prompt helpers -------------------------------------------------------------

def _reask(messages: list[ChatMessage], diagnostic: str) -> list[ChatMessage]:
    note = (f"\n\nYour previous reply could not be used ({diagnostic}). "
            "Reply again with exactly one fenced JSON block in the required format.")
    return [messages[0], ChatMessage("user", messages[1].content + note)]


def _ask(llm: CompletionProvider, template: PromptTemplate, agent: str, attempt: int,
         slots: dict[str, str], diagnostic: str | None, temperature: float | None) -> str:
    messages = template.messages(f"{agent}#{attempt}", **slots)
    if diagnostic:
        messages = _reask(messages, diagnostic)
    return llm.complete(CompletionRequest(getattr(llm, "model", ""), messages, temperature))


def _preview(text: str, limit: int = BODY_PREVIEW) -> str:
    return text if len(text) <= limit else text[:limit] + f"... [{len(text) - limit} more chars]"


def describe_request(request: GeneratedRequest) -> str:
    parts = [f"{request.method} {request.path}"]
    if request.path_values:
        parts.append(f"path: {json.dumps(request.path_values, sort_keys=True)}")
    if request.query_values:
        parts.append(f"query: {json.dumps(request.query_values, sort_keys=True)}")
    if request.header_values:
        parts.append(f"headers: {json.dumps(request.header_values, sort_keys=True)}")
    if request.body is not None:
        parts.append(f"body: {json.dumps(request.body, sort_keys=True)}")
    return "\n".join(parts)


def describe_response(response: HttpResponseRecord) -> str:
    if response.transport_error:
        return f"transport error: {response.transport_error}"
    return f"status {response.status}\n{_preview(response.body)}"


def render_context(context: Sequence[tuple[GeneratedRequest, HttpResponseRecord]]) -> str:
    if not context:
        return "(this is the first request of the scenario)"
    chunks = []
    for i, (req, resp) in enumerate(context, 1):
        chunks.append(f"### Request {i}\n{describe_request(req)}\n-> {describe_response(resp)}")
    return "\n\n".join(chunks)


def reference_section(ref_params: Sequence[tuple[str, str]] | None) -> str:
    if ref_params is None:
        return ""
    lines = [f"- {name} = {value}" for name, value in ref_params] or ["(no stored values yet)"]
    return "\n## Reference parameters\n" + "\n".join(lines) + "\n"


def reflection_section(reflections: Sequence[ReflectionRecord] | None) -> str:
    if reflections is None:
        return ""
    lines = [f"- request {r.request_detail}\n  problem: {r.failure_explanation}"
             for r in reflections] or ["(no recorded failures for this API)"]
    return "\n## Failure reflections\n" + "\n".join(lines) + "\n"


# --- agents -------------------------------------------------------------------

def summarize_history(history: Sequence[TestScenario], rng: random.Random,
                      limit: int = HISTORY_LIMIT) -> str:
    chosen = list(history)
    if len(chosen) > limit:
        chosen = sorted(rng.sample(chosen, limit), key=lambda s: s.scenario_id)
    if not chosen:
        return "(none yet)"
    return "\n".join(s.summary() for s in chosen)


def generate_scenario(apis: Sequence[ApiOperation], history: Sequence[TestScenario],
                      llm: CompletionProvider, catalog: ApiCatalog, rng: random.Random,
                      scenario_id: int = 1, template: PromptTemplate | None = None,
                      history_limit: int = HISTORY_LIMIT,
                      temperature: float | None = None) -> TestScenario:
    if not apis:
        raise ValueError("scenario generation needs at least one API")
    template = template or load_template("generator")
    slots = {
        "apis": "\n".join(render_markdown(op) for op in apis),
        "history": summarize_history(history, rng, history_limit),
    }
    diagnostic = None
    for attempt in range(1, SCENARIO_REASKS + 2):
        reply = _ask(llm, template, "scenario-gen", attempt, slots, diagnostic, temperature)
        try:
            parsed = parse_structured_reply(reply, "scenario")
        except ParseFailure as exc:
            diagnostic = exc.diagnostic
            continue
        steps: list[TestStep] = []
        warnings: list[str] = []
        for raw in parsed["steps"]:
            op = catalog.resolve(raw["api"])
            if op is None:
                msg = f"step {raw['title']!r} names unknown API {raw['api']!r}; dropped"
                log.warning(msg)
                warnings.append(msg)
                continue
            steps.append(TestStep(raw["title"], op.id, raw["description"], raw["expected_response"]))
        if steps:
            if not 8 <= len(steps) <= 12:
                log.info("scenario %d has %d steps (typical range is 8-12)", scenario_id, len(steps))
            return TestScenario(scenario_id, steps, [op.id for op in apis], warnings)
        diagnostic = "none of the steps named an API from the list"
    raise GenerationFailed(f"no usable scenario after {SCENARIO_REASKS + 1} attempts: {diagnostic}")


def _to_request(parsed: dict, op: ApiOperation) -> GeneratedRequest:
    path_values = {}
    for var in op.path_variables():
        value = parsed["path_values"].get(var)
        if value is None or value == "":
            raise ParseFailure("request", f"missing path value for {var!r}")
        path_values[var] = value if isinstance(value, str) else json.dumps(value)
    headers = {k: v if isinstance(v, str) else json.dumps(v)
               for k, v in parsed["header_values"].items() if v is not None}
    return GeneratedRequest(
        api=op.id,
        method=op.method,
        path=op.path,
        path_values=path_values,
        query_values={k: v for k, v in parsed["query_values"].items() if v is not None},
        header_values=headers,
        body=parsed["body"],
    )


def build_request(step: TestStep, api: ApiOperation,
                  scenario_context: Sequence[tuple[GeneratedRequest, HttpResponseRecord]],
                  ref_params: Sequence[tuple[str, str]] | None,
                  reflections: Sequence[ReflectionRecord] | None,
                  llm: CompletionProvider, template: PromptTemplate | None = None,
                  temperature: float | None = None) -> GeneratedRequest:
    """Ask the executor model for concrete request values for ``step``.

    Passing ``None`` for ``ref_params`` or ``reflections`` leaves that prompt
    section out entirely (used by the ablation switches).
    """
    template = template or load_template("executor")
    slots = {
        "title": step.title,
        "api": api.key,
        "description": step.description or "(none)",
        "expected_response": step.expected_response,
        "api_markdown": render_markdown(api),
        "scenario_context": render_context(scenario_context),
        "reference_parameters": reference_section(ref_params),
        "failure_reflections": reflection_section(reflections),
    }
    diagnostic = None
    for attempt in range(1, REQUEST_REASKS + 2):
        reply = _ask(llm, template, "executor", attempt, slots, diagnostic, temperature)
        try:
            return _to_request(parse_structured_reply(reply, "request"), api)
        except ParseFailure as exc:
            diagnostic = exc.diagnostic
    raise RequestConstructionFailed(f"{api.id}: {diagnostic}")


def _crash_verdict(verdict: ValidationVerdict | None, status: int) -> ValidationVerdict:
    explanation = verdict.explanation if verdict and verdict.explanation else \
        f"server returned {status} Internal Server Error"
    return ValidationVerdict(
        aligned=False,
        issue_kind="server_crash",
        explanation=explanation,
        minor_notes=verdict.minor_notes if verdict else "",
        issue_type="server-crash",
        severity=verdict.severity if verdict else "",
    )


def validate_response(step: TestStep, api: ApiOperation, request: GeneratedRequest,
                      response: HttpResponseRecord, llm: CompletionProvider,
                      scenario_context: Sequence[tuple[GeneratedRequest, HttpResponseRecord]] = (),
                      template: PromptTemplate | None = None,
                      temperature: float | None = None) -> ValidationVerdict:
    template = template or load_template("validator")
    slots = {
        "title": step.title,
        "api": api.key,
        "description": step.description or "(none)",
        "expected_response": step.expected_response,
        "api_markdown": render_markdown(api),
        "scenario_context": render_context(scenario_context),
        "request": describe_request(request),
        "status": str(response.status),
        "body": _preview(response.body) or "(empty)",
    }
    verdict = None
    diagnostic = None
    for attempt in range(1, VERDICT_REASKS + 2):
        reply = _ask(llm, template, "validator", attempt, slots, diagnostic, temperature)
        try:
            verdict = ValidationVerdict(**parse_structured_reply(reply, "verdict"))
            break
        except ParseFailure as exc:
            diagnostic = exc.diagnostic
    if response.status == 500:
        return _crash_verdict(verdict, 500)
    if verdict is None:
        log.warning("validator output unparseable for %s: %s", api.id, diagnostic)
        return ValidationVerdict(aligned=False, explanation="validator output unparseable")
    return verdict
