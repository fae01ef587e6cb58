"""Rendering raw task records into (input, target) turns and multi-turn examples."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .templates import DEFAULT_TARGET, TASKS, Template, TemplateError, TemplateRegistry, builtin_registry

# task -> (forward target, inverted target)
INVERSION = {"vqa_open": ("answer", "question"), "captioning": ("caption", "context")}


@dataclass(frozen=True)
class RawRecord:
    dataset: str
    task: str
    image_id: str
    slots: dict
    target: str = ""
    id: str = ""
    inverted: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if not self.target:
            object.__setattr__(self, "target", DEFAULT_TARGET[self.task])
        if not self.id:
            object.__setattr__(self, "id", f"{self.dataset}/{self.image_id}")
        if "bbox" in self.slots:
            check_bbox(self.slots["bbox"])

    @classmethod
    def from_dict(cls, d: dict) -> RawRecord:
        return cls(dataset=d["dataset"], task=d["task"], image_id=str(d["image_id"]),
                   slots=dict(d.get("slots", {})), target=d.get("target", ""), id=d.get("id", ""),
                   inverted=bool(d.get("inverted", False)))

    def to_dict(self) -> dict:
        return {"id": self.id, "dataset": self.dataset, "task": self.task, "image_id": self.image_id,
                "slots": self.slots, "target": self.target, "inverted": self.inverted}


@dataclass
class InstructionExample:
    image_id: str
    turns: list[tuple[str, str]]
    provenance: list[str] = field(default_factory=list)
    dataset: str = ""

    def __post_init__(self):
        if not self.turns:
            raise ValueError("an instruction example needs at least one turn")
        self.turns = [tuple(t) for t in self.turns]

    def segments(self) -> list[tuple[str, bool]]:
        """Text pieces flagged True where they are targets; turns join with a newline."""
        out: list[tuple[str, bool]] = []
        for i, (inp, tgt) in enumerate(self.turns):
            out.append((("\n" if i else "") + inp + " ", False))
            out.append((tgt, True))
        return out

    def text(self) -> str:
        return "".join(s for s, _ in self.segments())

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "dataset": self.dataset,
                "turns": [list(t) for t in self.turns], "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> InstructionExample:
        return cls(image_id=str(d["image_id"]), turns=[tuple(t) for t in d["turns"]],
                   provenance=list(d.get("provenance", [])), dataset=d.get("dataset", ""))


def check_bbox(bbox) -> None:
    vals = list(bbox)
    if len(vals) != 4:
        raise ValueError(f"bbox needs four coordinates, got {bbox!r}")
    x0, y0, x1, y1 = (float(v) for v in vals)
    if not all(0.0 <= v <= 1.0 for v in (x0, y0, x1, y1)):
        raise ValueError(f"bbox coordinates must lie in [0, 1]: {bbox!r}")
    if x0 > x1 or y0 > y1:
        raise ValueError(f"bbox must be ordered [x_min, y_min, x_max, y_max]: {bbox!r}")


def format_slot(name: str, value) -> str:
    if name == "bbox":
        check_bbox(value)
        return "[" + ", ".join(f"{float(v):.3f}" for v in value) + "]"
    if isinstance(value, (list, tuple)):
        return " ".join(str(v) for v in value)
    return str(value)


def render(template: Template, record: RawRecord) -> tuple[str, str]:
    for slot in template.required:
        if slot not in record.slots:
            raise TemplateError(f"record {record.id} lacks slot {slot!r} required by {template.scope}")
    text = template.body
    for slot in dict.fromkeys(template.slots):
        text = text.replace("{" + slot + "}", format_slot(slot, record.slots[slot]))
    return text, format_slot(template.target, record.slots[template.target])


def select_template(registry: TemplateRegistry, record: RawRecord, granularity: str = "fine",
                    diversity: str = "single", rng: np.random.Generator | None = None) -> Template:
    if granularity == "fine":
        scope = f"dataset:{record.dataset}"
    elif granularity == "coarse":
        scope = f"task:{registry.dataset_tasks.get(record.dataset, record.task)}"
    else:
        raise ValueError(f"granularity must be fine or coarse, got {granularity!r}")
    candidates = registry.at_scope(scope)
    forward = [t for t in candidates if t.direction == "forward" and t.target == record.target]
    if not forward:
        raise TemplateError(f"no forward template at scope {scope!r} targets {record.target!r}")
    if diversity == "single":
        return forward[0]
    if rng is None:
        raise ValueError(f"diversity={diversity!r} needs an rng")
    if diversity == "multi":
        return forward[int(rng.integers(len(forward)))]
    if diversity == "multi_flip":
        pool = forward + [t for t in candidates if t.direction == "inverted"]
        return pool[int(rng.integers(len(pool)))]
    raise ValueError(f"diversity must be single, multi or multi_flip, got {diversity!r}")


def invert(record: RawRecord) -> RawRecord:
    """Swap which slot is the target (VQA answer <-> question, caption <-> context)."""
    if record.task not in INVERSION:
        raise ValueError(f"input inversion is not defined for task {record.task!r}")
    fwd, inv = INVERSION[record.task]
    if record.target == fwd:
        if inv not in record.slots:
            raise ValueError(f"cannot invert {record.id}: no {inv!r} slot to predict")
        return replace(record, target=inv, inverted=not record.inverted)
    if record.target == inv:
        return replace(record, target=fwd, inverted=not record.inverted)
    raise ValueError(f"record target {record.target!r} is not invertible for {record.task!r}")


def normalize_target(text: str) -> str:
    return " ".join(text.lower().split())


def instructize_record(record: RawRecord, registry: TemplateRegistry, granularity: str = "fine",
                       diversity: str = "single", rng: np.random.Generator | None = None
                       ) -> tuple[str, str]:
    template = select_template(registry, record, granularity, diversity, rng)
    if template.direction == "inverted":
        record = invert(record)
    return render(template, record)


def merge_multiturn(records: Sequence[RawRecord], max_turns: int = 10, dedup: bool = True,
                    rng: np.random.Generator | None = None, registry: TemplateRegistry | None = None,
                    granularity: str = "fine", diversity: str = "single") -> InstructionExample:
    """Concatenate the records of one image into a conversation.

    With ``dedup`` only the first turn per normalized target survives.  At most
    ``max_turns`` turns are kept, in input order.
    """
    if not records:
        raise ValueError("merge_multiturn needs at least one record")
    image_ids = {r.image_id for r in records}
    if len(image_ids) != 1:
        raise ValueError(f"records span several images: {sorted(image_ids)}")
    if max_turns < 1:
        raise ValueError("max_turns must be at least 1")
    registry = builtin_registry() if registry is None else registry
    turns, provenance, seen = [], [], set()
    for rec in records:
        inp, tgt = instructize_record(rec, registry, granularity, diversity, rng)
        key = normalize_target(tgt)
        if dedup and key in seen:
            continue
        seen.add(key)
        turns.append((inp, tgt))
        provenance.append(rec.id)
        if len(turns) == max_turns:
            break
    return InstructionExample(records[0].image_id, turns, provenance, dataset=records[0].dataset)


def image_rng(seed: int, *key: str) -> np.random.Generator:
    """Independent, reproducible stream per image (stable across processes)."""
    h = hashlib.sha256("\x1f".join(key).encode()).digest()
    return np.random.default_rng([seed, int.from_bytes(h[:8], "little")])


def instructize(records: Iterable[RawRecord], registry: TemplateRegistry | None = None,
                granularity: str = "fine", diversity: str = "single", multi_turn: bool = False,
                dedup: bool = True, max_turns: int = 10, seed: int = 0) -> Iterator[InstructionExample]:
    """Instructize a record stream; multi-turn examples group records by (dataset, image)."""
    registry = builtin_registry() if registry is None else registry
    if not multi_turn:
        for i, rec in enumerate(records):
            rng = image_rng(seed, rec.dataset, rec.image_id, str(i))
            inp, tgt = instructize_record(rec, registry, granularity, diversity, rng)
            yield InstructionExample(rec.image_id, [(inp, tgt)], [rec.id], dataset=rec.dataset)
        return
    groups: dict[tuple[str, str], list[RawRecord]] = {}
    for rec in records:
        groups.setdefault((rec.dataset, rec.image_id), []).append(rec)
    for (ds, img), recs in groups.items():
        yield merge_multiturn(recs, max_turns, dedup, image_rng(seed, ds, img), registry,
                              granularity, diversity)


def read_records(path) -> list[RawRecord]:
    with open(path) as fh:
        return [RawRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def read_examples(path) -> list[InstructionExample]:
    with open(path) as fh:
        return [InstructionExample.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_jsonl(path, items) -> int:
    n = 0
    with open(Path(path), "w") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict()) + "\n")
            n += 1
    return n
