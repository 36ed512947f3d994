"""Records passed between the agents, the scheduler and the memory."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any

ISSUE_KINDS = ("none", "logical_issue", "server_crash")


@dataclass(frozen=True)
class TestStep:
    title: str
    api: str
    description: str
    expected_response: str

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self) -> None:
        if not self.expected_response.strip():
            raise ValueError("expected_response (the oracle) must be nonempty")


@dataclass
class TestScenario:
    scenario_id: int
    steps: list[TestStep]
    source_apis: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    __test__ = False

    def summary(self) -> str:
        lines = [f"Scenario {self.scenario_id}:"]
        lines += [f"  {i}. {s.title} [{s.api}]" for i, s in enumerate(self.steps, 1)]
        return "\n".join(lines)


@dataclass
class GeneratedRequest:
    api: str
    method: str
    path: str
    path_values: dict[str, str] = field(default_factory=dict)
    query_values: dict[str, Any] = field(default_factory=dict)
    header_values: dict[str, str] = field(default_factory=dict)
    body: Any = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class HttpResponseRecord:
    status: int | None = None
    headers: dict[str, str] = field(default_factory=dict)
    body: str = ""
    latency_ms: float = 0.0
    transport_error: str | None = None

    def __post_init__(self) -> None:
        if (self.status is None) == (self.transport_error is None):
            raise ValueError("exactly one of status or transport_error must be set")

    def to_dict(self) -> dict:
        return asdict(self)

    def json_body(self) -> Any:
        try:
            return json.loads(self.body)
        except (TypeError, ValueError):
            return None


@dataclass(frozen=True)
class ValidationVerdict:
    aligned: bool
    issue_kind: str = "none"
    explanation: str = ""
    minor_notes: str = ""
    issue_type: str = ""
    severity: str = ""

    def __post_init__(self) -> None:
        if self.issue_kind not in ISSUE_KINDS:
            raise ValueError(f"unknown issue kind {self.issue_kind!r}")
        if self.aligned and self.issue_kind != "none":
            raise ValueError("an aligned verdict cannot carry an issue")
        if not self.aligned and not self.explanation.strip():
            raise ValueError("a failed verdict needs an explanation")
