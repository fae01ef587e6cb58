"""Dataset mixture resolution and reproducible sampling streams."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

STRATEGIES = ("per_dataset", "per_task", "per_sample_100k", "per_dataset_tuned")

# instruction-tuning sampling ratios in percent, as published
TUNED_PERCENT = {
    "VQAv2": 10.3, "GQA": 10.3, "OCRVQA": 5.1, "VSR": 2.6,
    "ScienceQA": 5.1, "A-OKVQA": 10.3,
    "COYO100M": 7.7,
    "RefCOCO": 10.3, "RefCOCO+": 10.3, "RefCOCOg": 10.3, "VG": 5.1,
    "LLaVA150K": 10.3, "ShareGPT": 2.6,
}
TUNED_TASKS = {
    "VQAv2": "vqa_open", "GQA": "vqa_open", "OCRVQA": "vqa_open", "VSR": "vqa_open",
    "ScienceQA": "vqa_mc", "A-OKVQA": "vqa_mc", "COYO100M": "captioning",
    "RefCOCO": "rec", "RefCOCO+": "rec", "RefCOCOg": "rec", "VG": "rec",
    "LLaVA150K": "instruction", "ShareGPT": "instruction",
}


class MixtureError(ValueError):
    pass


@dataclass
class MixtureEntry:
    dataset: str
    task: str
    size: int
    weight: float | None = None


@dataclass
class MixtureSpec:
    entries: list[MixtureEntry]
    strategy: str = "per_dataset"
    clip: int = 100_000

    def __post_init__(self):
        self.entries = [e if isinstance(e, MixtureEntry) else MixtureEntry(**e) for e in self.entries]
        if not self.entries:
            raise MixtureError("a mixture needs at least one dataset")
        if self.strategy not in STRATEGIES:
            raise MixtureError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        names = [e.dataset for e in self.entries]
        if len(set(names)) != len(names):
            raise MixtureError("dataset names must be unique")
        if any(e.size <= 0 for e in self.entries):
            raise MixtureError("dataset sizes must be positive")
        if self.clip <= 0:
            raise MixtureError("clip must be positive")
        weights = [e.weight for e in self.entries]
        if self.strategy == "per_dataset_tuned":
            if any(w is None for w in weights):
                raise MixtureError("per_dataset_tuned needs a hand weight for every dataset")
            if any(w < 0 for w in weights) or sum(weights) <= 0:
                raise MixtureError("hand weights must be non-negative with a positive sum")
        elif any(w is not None for w in weights):
            raise MixtureError(f"hand weights are only accepted with per_dataset_tuned, not {self.strategy}")

    @classmethod
    def from_dict(cls, d: dict) -> MixtureSpec:
        return cls(entries=[MixtureEntry(**e) for e in d["entries"]],
                   strategy=d.get("strategy", "per_dataset"), clip=int(d.get("clip", 100_000)))

    @classmethod
    def load(cls, path) -> MixtureSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "clip": self.clip,
                "entries": [{k: v for k, v in vars(e).items() if v is not None} for e in self.entries]}

    @property
    def sizes(self) -> dict[str, int]:
        return {e.dataset: e.size for e in self.entries}


@dataclass
class MixtureTable:
    probs: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        total = sum(self.probs.values())
        if any(p < 0 for p in self.probs.values()) or abs(total - 1.0) > 1e-12:
            raise MixtureError(f"probabilities must be non-negative and sum to 1 (got {total!r})")

    def __getitem__(self, name: str) -> float:
        return self.probs[name]

    @property
    def names(self) -> list[str]:
        return list(self.probs)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "probability"])
            for name, p in self.probs.items():
                w.writerow([name, repr(p)])


def _normalize(raw: dict[str, float]) -> dict[str, float]:
    total = float(np.sum(list(raw.values())))
    probs = {k: v / total for k, v in raw.items()}
    # push the rounding residue onto the largest entry so the sum is 1 to ~1 ulp
    residue = 1.0 - sum(probs.values())
    top = max(probs, key=probs.get)
    probs[top] += residue
    return probs


def resolve(spec: MixtureSpec) -> MixtureTable:
    entries = spec.entries
    if spec.strategy == "per_dataset":
        raw = {e.dataset: 1.0 for e in entries}
    elif spec.strategy == "per_task":
        per_task: dict[str, int] = {}
        for e in entries:
            per_task[e.task] = per_task.get(e.task, 0) + 1
        raw = {e.dataset: 1.0 / (len(per_task) * per_task[e.task]) for e in entries}
    elif spec.strategy == "per_sample_100k":
        raw = {e.dataset: float(min(e.size, spec.clip)) for e in entries}
    else:
        raw = {e.dataset: float(e.weight) for e in entries}
    return MixtureTable(_normalize(raw))


def tuned_spec(sizes: dict[str, int] | None = None) -> MixtureSpec:
    """The published per-dataset-tuned instruction mixture (sizes only feed epoch reports)."""
    sizes = sizes or {}
    return MixtureSpec(
        entries=[MixtureEntry(ds, TUNED_TASKS[ds], int(sizes.get(ds, 100_000)), pct)
                 for ds, pct in TUNED_PERCENT.items()],
        strategy="per_dataset_tuned")


def sample_stream(table: MixtureTable, seed: int) -> Iterator[str]:
    """Endless i.i.d. categorical draws from a PCG64 generator seeded with ``seed``.

    Each draw consumes one uniform double and inverts the cumulative table.
    """
    names = table.names
    cdf = np.cumsum([table.probs[n] for n in names])
    cdf[-1] = 1.0
    rng = np.random.Generator(np.random.PCG64(seed))
    while True:
        for u in rng.random(1024):
            yield names[int(np.searchsorted(cdf, u, side="right"))]


def sample(table: MixtureTable, seed: int, n: int) -> list[str]:
    if n < 0:
        raise ValueError("n must be non-negative")
    names = table.names
    cdf = np.cumsum([table.probs[name] for name in names])
    cdf[-1] = 1.0
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return [names[i] for i in idx]


def epochs_report(table: MixtureTable, n: int, sizes: dict[str, int]) -> dict[str, float]:
    """Expected passes over each dataset after ``n`` sampled examples."""
    for name, s in sizes.items():
        if s <= 0:
            raise ValueError(f"size of {name} must be positive")
    return {name: n * table.probs.get(name, 0.0) / sizes[name] for name in sizes}
