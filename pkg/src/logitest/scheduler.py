"""Scenario scheduler: the step list, its pointer and per-step retry counts."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NoActiveScenario, ScenarioStillActive
from .models import TestScenario, TestStep

DEFAULT_RETRY_LIMIT = 3


@dataclass
class ScheduledStep:
    step: TestStep
    retry: int = 0


@dataclass
class ScenarioSchedule:
    retry_limit: int = DEFAULT_RETRY_LIMIT
    steps: list[ScheduledStep] = field(default_factory=list)
    pointer: int = 0
    failed: bool = False
    scenario_id: int | None = None

    def add_scenario(self, scenario: TestScenario) -> "ScenarioSchedule":
        if self.steps:
            raise ScenarioStillActive(f"scenario {self.scenario_id} still has {len(self.steps)} steps")
        self.steps = [ScheduledStep(step) for step in scenario.steps]
        self.pointer = 0
        self.failed = False
        self.scenario_id = scenario.scenario_id
        return self

    def current(self) -> ScheduledStep:
        if not self.steps:
            raise NoActiveScenario("no scenario is active")
        return self.steps[self.pointer]

    def retrieve_step(self) -> TestStep:
        return self.current().step

    def update_status(self, outcome: str) -> "ScenarioSchedule":
        entry = self.current()
        if outcome == "passed":
            del self.steps[self.pointer]
            # removal shifts the next step into the pointer slot
            self.pointer = min(self.pointer, len(self.steps))
        elif outcome == "failed":
            entry.retry += 1
            if entry.retry > self.retry_limit:
                self.steps.clear()
                self.pointer = 0
                self.failed = True
        else:
            raise ValueError(f"outcome must be 'passed' or 'failed', not {outcome!r}")
        return self

    def check_termination(self) -> bool:
        return not self.steps
