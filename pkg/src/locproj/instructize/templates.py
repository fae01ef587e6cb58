"""Instruction templates and the built-in per-dataset registry."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

TASKS = ("captioning", "vqa_open", "vqa_mc", "rec", "instruction")

# default target slot per task; REC records may instead target "phrase"
DEFAULT_TARGET = {
    "captioning": "caption",
    "vqa_open": "answer",
    "vqa_mc": "answer",
    "rec": "bbox",
    "instruction": "response",
}

_SLOT = re.compile(r"\{([a-z_]+)\}")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    """``body`` is the input text with {slot} placeholders, ending in "AI:".

    The target is the single slot ``target`` that follows the final "AI:".
    """

    scope: str  # "dataset:<name>" or "task:<task>"
    body: str
    target: str
    direction: str = "forward"

    def __post_init__(self):
        if self.direction not in ("forward", "inverted"):
            raise TemplateError(f"direction must be forward or inverted, got {self.direction!r}")
        if not self.body.endswith("AI:"):
            raise TemplateError(f"template body must end with the 'AI:' marker: {self.body!r}")
        if self.target in self.slots:
            raise TemplateError(f"target slot {self.target!r} also appears in the input")
        kind, _, name = self.scope.partition(":")
        if kind not in ("dataset", "task") or not name:
            raise TemplateError(f"bad scope {self.scope!r}")

    @property
    def slots(self) -> list[str]:
        return _SLOT.findall(self.body)

    @property
    def required(self) -> list[str]:
        return self.slots + [self.target]

    def to_dict(self) -> dict:
        return {"scope": self.scope, "direction": self.direction, "body": self.body,
                "target": self.target}


_VQA = "Human: Answer the question using a single word or phrase. {question} AI:"
_MC = "Answer with the option's letter from the given choices directly."
_GROUND = "Human: Provide the bounding box coordinate of the region this sentence describes: {phrase} AI:"
_REGION = "Human: Provide a description for the region {bbox}, "
_INSTR = "Human: {instruction} AI:"

# (task, dataset, body, target) in table order
BUILTIN_ROWS = [
    ("captioning", "BlipCapFilt", "AI:", "caption"),
    ("captioning", "COYO100M", "AI:", "caption"),
    ("vqa_open", "VQAv2", _VQA, "answer"),
    ("vqa_open", "GQA", _VQA, "answer"),
    ("vqa_open", "OCRVQA", _VQA, "answer"),
    ("vqa_open", "VSR", "Human: Answer the question using a single word or phrase. {question} "
                        "Please answer yes or no. AI:", "answer"),
    ("vqa_mc", "ScienceQA", f"Human: {_MC} {{question}} Context: {{context}} "
                            "There are several options: {option} AI:", "answer"),
    ("vqa_mc", "A-OKVQA", f"{_MC} {{question}} There are several options: {{option}} AI:", "answer"),
    ("rec", "RefCOCO", _GROUND, "bbox"),
    ("rec", "RefCOCO", _REGION + "utilizing positional words to refer to objects. "
                       "Example: 'The large blue teddy bear next to the red balloon' AI:", "phrase"),
    ("rec", "RefCOCO+", _GROUND, "bbox"),
    ("rec", "RefCOCO+", _REGION + "focusing on the appearance of objects without using positional "
                        "words. Example: 'The large blue teddy bear holding a red balloon.' AI:", "phrase"),
    ("rec", "RefCOCOg", _GROUND, "bbox"),
    ("rec", "RefCOCOg", _REGION + "using detailed and descriptive expressions to refer to objects. "
                        "Example: 'The large blue teddy bear holding a red balloon with a joyful "
                        "expression.' AI:", "phrase"),
    ("rec", "VG", _GROUND, "bbox"),
    ("rec", "VG", "Human: Provide a short description for this region: {bbox} AI:", "phrase"),
    ("instruction", "LLaVA150K", _INSTR, "response"),
    ("instruction", "ShareGPT", _INSTR, "response"),
]

# shared task-level templates for coarse granularity
COARSE_ROWS = [
    ("captioning", "AI:", "caption"),
    ("vqa_open", _VQA, "answer"),
    ("vqa_mc", f"{_MC} {{question}} There are several options: {{option}} AI:", "answer"),
    ("rec", _GROUND, "bbox"),
    ("rec", "Human: Provide a short description for this region: {bbox} AI:", "phrase"),
    ("instruction", _INSTR, "response"),
]

DATASET_TASK = {ds: task for task, ds, _, _ in BUILTIN_ROWS}


class TemplateRegistry:
    def __init__(self, templates=(), dataset_tasks: dict[str, str] | None = None):
        self.templates: list[Template] = list(templates)
        self.dataset_tasks = dict(DATASET_TASK if dataset_tasks is None else dataset_tasks)

    def add(self, template: Template) -> None:
        self.templates.append(template)

    def at_scope(self, scope: str) -> list[Template]:
        return [t for t in self.templates if t.scope == scope]

    def to_json(self) -> list[dict]:
        return [t.to_dict() for t in self.templates]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path, base: TemplateRegistry | None = None) -> TemplateRegistry:
        """Read a JSON list of {scope, direction, body, target}, optionally extending ``base``."""
        entries = json.loads(Path(path).read_text())
        reg = cls(base.templates if base else (), base.dataset_tasks if base else None)
        for e in entries:
            reg.add(Template(scope=e["scope"], body=e["body"], target=e["target"],
                             direction=e.get("direction", "forward")))
        return reg


def builtin_registry() -> TemplateRegistry:
    reg = TemplateRegistry()
    for task, ds, body, target in BUILTIN_ROWS:
        reg.add(Template(f"dataset:{ds}", body, target))
    for task, body, target in COARSE_ROWS:
        reg.add(Template(f"task:{task}", body, target))
    return reg
