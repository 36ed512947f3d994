"""Issue/crash records, deduplication, coverage and report files."""

from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .models import HttpResponseRecord
from .spec_model import ApiCatalog

SEVERITIES = ("bug_candidate", "enhancement_candidate", "unclassified")

# Stripped from crash bodies before comparison.
DEFAULT_VOLATILE_PATTERNS = (
    r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:Z|[+-]\d{2}:?\d{2})?",
    r"\b[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}\b",
    r"\b0x[0-9a-fA-F]+\b",
    r'"timestamp"\s*:\s*\d+',
)


def normalize_issue_type(text: str) -> str:
    return " ".join((text or "").lower().split()) or "other"


def severity_candidate(text: str) -> str:
    text = (text or "").strip().lower()
    if text.startswith("bug"):
        return "bug_candidate"
    if text.startswith("enhancement"):
        return "enhancement_candidate"
    return "unclassified"


def response_snapshot(response: HttpResponseRecord) -> dict:
    # headers and latency vary between runs; keep them out of reports
    return {"status": response.status, "body": response.body,
            "transport_error": response.transport_error}


@dataclass
class IssueReport:
    api: str
    issue_type: str
    severity: str
    explanation: str
    request: dict = field(default_factory=dict)
    response: dict = field(default_factory=dict)
    scenario_id: int | None = None
    step_title: str = ""
    exchange_seq: int | None = None

    def __post_init__(self) -> None:
        if not self.explanation.strip():
            raise ValueError("issue explanation must be nonempty")
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        self.issue_type = normalize_issue_type(self.issue_type)

    @property
    def key(self) -> tuple[str, str]:
        return self.api, self.issue_type


@dataclass
class CrashRecord:
    api: str
    response_body: str
    request: dict = field(default_factory=dict)
    status: int = 500
    scenario_id: int | None = None
    step_title: str = ""
    exchange_seq: int | None = None

    def __post_init__(self) -> None:
        if self.status != 500:
            raise ValueError("crash records originate from status 500 responses")


@dataclass
class CoverageSummary:
    total_operations: int
    covered_operations: int
    operations: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.covered_operations > self.total_operations:
            raise ValueError("covered operations exceed the catalog size")

    @property
    def ratio(self) -> float:
        return self.covered_operations / self.total_operations if self.total_operations else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def dedup_issues(raw: Sequence[IssueReport]) -> list[IssueReport]:
    seen: set[tuple[str, str]] = set()
    out = []
    for report in raw:
        if report.key not in seen:
            seen.add(report.key)
            out.append(report)
    return out


def normalize_body(body: str, patterns: Iterable[str] = DEFAULT_VOLATILE_PATTERNS) -> str:
    for pattern in patterns:
        body = re.sub(pattern, "<volatile>", body)
    return " ".join(body.split())


def dedup_crashes(raw: Sequence[CrashRecord],
                  patterns: Iterable[str] = DEFAULT_VOLATILE_PATTERNS) -> list[CrashRecord]:
    patterns = tuple(patterns)
    seen: set[tuple[str, str]] = set()
    out = []
    for crash in raw:
        key = (crash.api, normalize_body(crash.response_body, patterns))
        if key not in seen:
            seen.add(key)
            out.append(crash)
    return out


def operation_coverage(log: Iterable[dict], catalog: ApiCatalog) -> CoverageSummary:
    tallies = {op.id: {"requests": 0, "2xx": 0} for op in catalog}
    for entry in log:
        api = entry.get("api")
        if api not in tallies:
            continue
        tallies[api]["requests"] += 1
        status = (entry.get("response") or {}).get("status")
        if isinstance(status, int) and 200 <= status <= 299:
            tallies[api]["2xx"] += 1
    covered = sum(1 for t in tallies.values() if t["2xx"] > 0)
    return CoverageSummary(len(tallies), covered, tallies)


@dataclass
class RunReport:
    raw_issues: list[IssueReport] = field(default_factory=list)
    raw_crashes: list[CrashRecord] = field(default_factory=list)
    coverage: CoverageSummary | None = None
    requests_issued: int = 0
    request_budget: int = 0
    scenarios_generated: int = 0
    scenarios_completed: int = 0
    scenarios_failed: int = 0
    stop_reason: str = ""
    exchange_log: str | None = None
    run_log: str | None = None
    memory_journal: str | None = None

    @property
    def issues(self) -> list[IssueReport]:
        return dedup_issues(self.raw_issues)

    @property
    def crashes(self) -> list[CrashRecord]:
        return dedup_crashes(self.raw_crashes)

    def meta(self) -> dict:
        return {
            "requests_issued": self.requests_issued,
            "request_budget": self.request_budget,
            "scenarios_generated": self.scenarios_generated,
            "scenarios_completed": self.scenarios_completed,
            "scenarios_failed": self.scenarios_failed,
            "raw_issue_reports": len(self.raw_issues),
            "raw_crash_reports": len(self.raw_crashes),
            "stop_reason": self.stop_reason,
            "exchange_log": self.exchange_log,
            "run_log": self.run_log,
            "memory_journal": self.memory_journal,
        }


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _jsonl(records: Iterable[Any]) -> str:
    return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in records)


def render_summary(issues: Sequence[dict], crashes: Sequence[dict], coverage: dict | None,
                   meta: dict | None = None) -> str:
    meta = meta or {}
    by_severity = {s: 0 for s in SEVERITIES}
    for issue in issues:
        by_severity[issue.get("severity", "unclassified")] = \
            by_severity.get(issue.get("severity", "unclassified"), 0) + 1
    total = (coverage or {}).get("total_operations", 0)
    covered = (coverage or {}).get("covered_operations", 0)
    pct = 100.0 * covered / total if total else 0.0
    lines = [
        "Campaign summary",
        "----------------",
        f"requests issued         {meta.get('requests_issued', 0)} / {meta.get('request_budget', 0)}",
        f"scenarios               {meta.get('scenarios_generated', 0)} generated, "
        f"{meta.get('scenarios_completed', 0)} completed, {meta.get('scenarios_failed', 0)} failed",
        f"total reports           {meta.get('raw_issue_reports', len(issues))}",
        f"issues (deduplicated)   {len(issues)}",
        f"  bug candidates        {by_severity['bug_candidate']}",
        f"  enhancement candidates {by_severity['enhancement_candidate']}",
        f"  unclassified          {by_severity['unclassified']}",
        f"crash reports           {meta.get('raw_crash_reports', len(crashes))}",
        f"crashes (deduplicated)  {len(crashes)}",
        f"operation coverage      {covered}/{total} ({pct:.1f}%)",
    ]
    if meta.get("stop_reason"):
        lines.append(f"stopped because         {meta['stop_reason']}")
    return "\n".join(lines) + "\n"


def emit_reports(run: RunReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    issues, crashes = run.issues, run.crashes
    coverage = run.coverage.to_dict() if run.coverage else {"total_operations": 0,
                                                            "covered_operations": 0,
                                                            "operations": {}}
    files = {
        "issues": out / "issues.jsonl",
        "crashes": out / "crashes.jsonl",
        "coverage": out / "coverage.json",
        "run": out / "run.json",
        "summary": out / "summary.txt",
    }
    _atomic_write(files["issues"], _jsonl(issues))
    _atomic_write(files["crashes"], _jsonl(crashes))
    _atomic_write(files["coverage"], json.dumps(coverage, indent=2) + "\n")
    _atomic_write(files["run"], json.dumps(run.meta(), indent=2, sort_keys=True) + "\n")
    _atomic_write(files["summary"], render_summary([asdict(i) for i in issues],
                                                   [asdict(c) for c in crashes], coverage,
                                                   run.meta()))
    return files


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def rerender_summary(out_dir: str | Path) -> str:
    """Rebuild summary.txt from the JSON artifacts already in ``out_dir``."""
    out = Path(out_dir)
    coverage_path, run_path = out / "coverage.json", out / "run.json"
    coverage = json.loads(coverage_path.read_text(encoding="utf-8")) if coverage_path.exists() else None
    meta = json.loads(run_path.read_text(encoding="utf-8")) if run_path.exists() else None
    text = render_summary(_read_jsonl(out / "issues.jsonl"), _read_jsonl(out / "crashes.jsonl"),
                          coverage, meta)
    _atomic_write(out / "summary.txt", text)
    return text
