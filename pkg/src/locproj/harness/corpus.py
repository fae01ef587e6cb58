"""Synthetic corpora and probe sets for desk-scale pipeline runs."""

from __future__ import annotations

import numpy as np

from ..instructize import InstructionExample, RawRecord, builtin_registry, instructize
from .model import ProbeItem

COLORS = ["red", "blue", "green", "white", "black", "yellow", "pink", "brown"]
OBJECTS = ["cat", "dog", "cup", "car", "tree", "bird", "lamp", "boat"]


def caption_corpus(n: int, seed: int = 0, dataset: str = "COYO100M") -> list[InstructionExample]:
    """Caption-only examples; each image gets a caption fixed by its index."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        c, o = COLORS[rng.integers(len(COLORS))], OBJECTS[rng.integers(len(OBJECTS))]
        records.append(RawRecord(dataset, "captioning", f"img{i:04d}", {"caption": f"a {c} {o}"}))
    return list(instructize(records, builtin_registry(), seed=seed))


def memorization_corpus(n: int = 8, dataset: str = "VQAv2") -> list[InstructionExample]:
    """``n`` distinct single-turn VQA examples, one image each."""
    records = []
    for i in range(n):
        obj = OBJECTS[i % len(OBJECTS)]
        records.append(RawRecord(dataset, "vqa_open", f"mem{i:02d}",
                                 {"question": f"What color is the {obj}?",
                                  "answer": COLORS[i % len(COLORS)]}))
    return list(instructize(records, builtin_registry()))


def probe_from_examples(examples: list[InstructionExample], n_options: int = 4,
                        seed: int = 0) -> list[ProbeItem]:
    """Multiple-choice items whose distractors are other examples' first-turn targets."""
    rng = np.random.default_rng(seed)
    answers = sorted({ex.turns[0][1] for ex in examples})
    if len(answers) < n_options:
        raise ValueError(f"need at least {n_options} distinct answers, got {len(answers)}")
    items = []
    for ex in examples:
        prompt, answer = ex.turns[0]
        others = [a for a in answers if a != answer]
        opts = list(rng.choice(others, size=n_options - 1, replace=False))
        k = int(rng.integers(n_options))
        opts.insert(k, answer)
        items.append(ProbeItem(ex.image_id, prompt, opts, k))
    return items


def random_probe(n: int, n_options: int = 4, seed: int = 0) -> list[ProbeItem]:
    """Letter-choice items with uniformly random correct letters."""
    rng = np.random.default_rng(seed)
    letters = [chr(ord("A") + i) for i in range(n_options)]
    items = []
    for i in range(n):
        obj = OBJECTS[rng.integers(len(OBJECTS))]
        prompt = (f"Answer with the option's letter from the given choices directly. "
                  f"Which color is the {obj}? There are several options: "
                  + " ".join(f"{l}. {COLORS[(i + j) % len(COLORS)]}" for j, l in enumerate(letters))
                  + " AI:")
        items.append(ProbeItem(f"probe{i:05d}", prompt, letters, int(rng.integers(n_options))))
    return items
