"""Benchmark score containers and the normalized average."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_BOUNDS = {"MMB": 100.0, "SEED": 100.0, "MME^P": 2000.0}
# subtask families: "MME-POS" scores out of 200, "MMB-SR" or "SEED-IL" out of 100
PREFIX_BOUNDS = {"MME-": 200.0, "MMB-": 100.0, "SEED-": 100.0}


def default_bound(name: str) -> float | None:
    if name in DEFAULT_BOUNDS:
        return DEFAULT_BOUNDS[name]
    for prefix, bound in PREFIX_BOUNDS.items():
        if name.startswith(prefix):
            return bound
    return None


@dataclass
class BenchScores:
    scores: dict[str, float]
    bounds: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.scores = {k: float(v) for k, v in self.scores.items()}
        resolved = {}
        for name, score in self.scores.items():
            bound = self.bounds.get(name, default_bound(name))
            if bound is None:
                raise KeyError(f"no upper bound known for score {name!r}")
            if bound <= 0:
                raise ValueError(f"bound of {name} must be positive")
            if not 0.0 <= score <= bound:
                raise ValueError(f"{name}={score} lies outside [0, {bound}]")
            resolved[name] = float(bound)
        self.bounds = resolved

    @classmethod
    def from_json(cls, path) -> BenchScores:
        d = json.loads(Path(path).read_text())
        if "scores" in d:
            return cls(d["scores"], d.get("bounds", {}))
        return cls(d)


def avg_n(scores: BenchScores) -> float:
    """100 times the mean of score/bound."""
    if not scores.scores:
        raise ValueError("avg_n needs at least one score")
    ratios = [scores.scores[k] / scores.bounds[k] for k in scores.scores]
    return 100.0 * sum(ratios) / len(ratios)
