"""Four-part prompt templates loaded from plain text files.

A template file has four sections introduced by ``[ROLE]``,
``[REQUIREMENTS]``, ``[EXAMPLES]`` and ``[INPUT]``. The first three form
the system message; the input section, with its ``{{slot}}`` markers
filled, forms the user message.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .llm import ChatMessage

SECTIONS = ("ROLE", "REQUIREMENTS", "EXAMPLES", "INPUT")
_SECTION_RE = re.compile(r"^\[(ROLE|REQUIREMENTS|EXAMPLES|INPUT)\]\s*$", re.MULTILINE)
_SLOT_RE = re.compile(r"\{\{([a-z_]+)\}\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    role_assignment: str
    detailed_requirements: str
    few_shot_examples: str
    input_template: str

    @property
    def placeholders(self) -> list[str]:
        return list(dict.fromkeys(_SLOT_RE.findall(self.input_template)))

    @classmethod
    def parse(cls, name: str, text: str) -> "PromptTemplate":
        parts: dict[str, str] = {}
        matches = list(_SECTION_RE.finditer(text))
        for i, m in enumerate(matches):
            end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
            parts[m.group(1)] = text[m.end():end].strip()
        missing = [s for s in SECTIONS if not parts.get(s)]
        if missing:
            raise ValueError(f"prompt template {name!r} lacks sections: {', '.join(missing)}")
        return cls(name, parts["ROLE"], parts["REQUIREMENTS"], parts["EXAMPLES"], parts["INPUT"])

    def system_text(self, route: str) -> str:
        return (f"# Role\n{self.role_assignment}\n\n"
                f"# Requirements\n{self.detailed_requirements}\n\n"
                f"# Examples\n{self.few_shot_examples}\n\n"
                f"[route: {route}]")

    def fill(self, **values: str) -> str:
        missing = [s for s in self.placeholders if s not in values]
        if missing:
            raise ValueError(f"unfilled placeholders in {self.name!r}: {', '.join(missing)}")
        unknown = set(values) - set(self.placeholders)
        if unknown:
            raise ValueError(f"unknown placeholders for {self.name!r}: {', '.join(sorted(unknown))}")
        # single pass, so slot markers inside filled values are left alone
        return _SLOT_RE.sub(lambda m: values[m.group(1)], self.input_template)

    def messages(self, route: str, **values: str) -> list[ChatMessage]:
        return [ChatMessage("system", self.system_text(route)),
                ChatMessage("user", self.fill(**values))]


def load_template(name: str, prompts_dir: str | Path | None = None) -> PromptTemplate:
    if prompts_dir is not None:
        path = Path(prompts_dir) / f"{name}.txt"
        if path.exists():
            return PromptTemplate.parse(name, path.read_text(encoding="utf-8"))
    text = resources.files("logitest").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate.parse(name, text)
