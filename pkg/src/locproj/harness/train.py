"""Stage configs, AdamW, the warmup+cosine schedule and the two-stage training loop."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..instructize import InstructionExample
from ..mixer import MixtureTable, sample_stream
from ..nn import Parameter
from .model import VisionLanguageModel, make_batch, response_loss

STAGES = ("pretrain", "instruction_tune")
TRAINABLE = {"pretrain": ("projector",), "instruction_tune": ("projector", "lm")}


@dataclass(frozen=True)
class StageConfig:
    stage: str
    batch_size: int
    lr: float
    min_lr: float
    warmup_steps: int
    total_steps: int
    weight_decay: float
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-6
    grad_clip: float = 1.0
    max_text_len: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be positive")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps)")
        if not 0 <= self.min_lr <= self.lr:
            raise ValueError("need 0 <= min_lr <= lr")
        if self.weight_decay < 0 or self.grad_clip <= 0 or self.eps <= 0:
            raise ValueError("weight_decay must be >= 0, grad_clip and eps > 0")

    @property
    def trainable(self) -> tuple[str, ...]:
        return TRAINABLE[self.stage]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> StageConfig:
        return cls(**d)

    @classmethod
    def load(cls, path) -> StageConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    # published recipes
    @classmethod
    def reference_pretrain(cls) -> StageConfig:
        return cls("pretrain", 256, 3e-4, 1e-5, 2000, 200_000, 0.01)

    @classmethod
    def reference_finetune(cls, d_abstractor: bool = False) -> StageConfig:
        return cls("instruction_tune", 128, 1e-4 if d_abstractor else 2e-5, 1e-6, 150, 10_000, 1e-4)

    # desk-scale recipes for the synthetic pipeline
    @classmethod
    def toy_pretrain(cls, steps: int = 300) -> StageConfig:
        return cls("pretrain", 8, 3e-3, 1e-4, min(30, steps - 1), steps, 0.01)

    @classmethod
    def toy_finetune(cls, steps: int = 500) -> StageConfig:
        return cls("instruction_tune", 8, 3e-3, 1e-4, min(30, steps - 1), steps, 1e-4)


def lr_at(step: int, cfg: StageConfig) -> float:
    """Linear warmup to ``lr`` at step ``warmup``, then cosine to ``min_lr`` at the last step."""
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = cfg.total_steps - 1 - cfg.warmup_steps
    if span <= 0:
        return cfg.lr
    frac = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + math.cos(math.pi * frac))


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class AdamW:
    """Adam with decoupled weight decay applied to matrices (ndim >= 2) only."""

    def __init__(self, params: Sequence[Parameter], betas=(0.9, 0.98), eps: float = 1e-6,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay and p.ndim >= 2:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class TrainLog:
    stage: str
    rows: list[dict] = field(default_factory=list)
    frozen_groups: tuple[str, ...] = ()
    seconds: float = 0.0

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.rows])

    @property
    def lrs(self) -> np.ndarray:
        return np.array([r["lr"] for r in self.rows])

    def checksums(self, group: str) -> list[str]:
        return [r[f"{group}_checksum"] for r in self.rows]

    def write_csv(self, path) -> None:
        if not self.rows:
            raise ValueError("empty log")
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.rows[0]))
            w.writeheader()
            for r in self.rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


class DatasetCursor:
    """Walks one dataset in a seeded order that is reshuffled every epoch."""

    def __init__(self, examples: Sequence[InstructionExample], rng: np.random.Generator):
        if not examples:
            raise ValueError("cannot sample from an empty dataset")
        self.examples = list(examples)
        self.rng = rng
        self.order: list[int] = []
        self.epoch = 0

    def next(self) -> InstructionExample:
        if not self.order:
            self.order = list(self.rng.permutation(len(self.examples)))
            self.epoch += 1
        return self.examples[self.order.pop(0)]


def _as_corpus(corpus) -> dict[str, list[InstructionExample]]:
    if isinstance(corpus, Mapping):
        out = {k: list(v) for k, v in corpus.items()}
    else:
        out = {}
        for ex in corpus:
            out.setdefault(ex.dataset or "corpus", []).append(ex)
    out = {k: v for k, v in out.items() if v}
    if not out:
        raise ValueError("the training corpus is empty")
    return out


def run_stage(model: VisionLanguageModel, config: StageConfig, mixture: MixtureTable | None,
              corpus, seed: int = 0) -> TrainLog:
    """Train ``model`` in place for one stage and return the per-step log.

    Batch slots draw a dataset from ``mixture`` (uniform over the corpus when
    None) and then the next example from that dataset's shuffled order.
    """
    corpus = _as_corpus(corpus)
    if mixture is None:
        mixture = MixtureTable({k: 1.0 / len(corpus) for k in corpus}) if len(corpus) > 1 \
            else MixtureTable({next(iter(corpus)): 1.0})
    missing = [k for k, p in mixture.probs.items() if p > 0 and k not in corpus]
    if missing:
        raise ValueError(f"mixture names datasets absent from the corpus: {missing}")

    groups = {"encoder": model.encoder, "projector": model.projector, "lm": model.lm}
    frozen = tuple(g for g in groups if g not in config.trainable)
    for name, module in groups.items():
        module.requires_grad_(name in config.trainable)
        module.zero_grad()
    params = [p for g in config.trainable for p in groups[g].parameters()]
    opt = AdamW(params, config.betas, config.eps, config.weight_decay)

    stream = sample_stream(mixture, seed)
    cursors = {name: DatasetCursor(exs, np.random.default_rng([seed, i]))
               for i, (name, exs) in enumerate(sorted(corpus.items()))}
    log = TrainLog(config.stage, frozen_groups=frozen)
    t0 = time.perf_counter()
    for step in range(config.total_steps):
        picks = [cursors[next(stream)].next() for _ in range(config.batch_size)]
        batch = make_batch(picks, config.max_text_len)
        lr = lr_at(step, config)
        opt.zero_grad()
        loss = response_loss(model, batch)
        value = float(loss.data)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss {value} at step {step}")
        loss.backward()
        gnorm = clip_grad_norm(params, config.grad_clip)
        opt.step(lr)
        row = {"step": step, "loss": value, "lr": lr, "grad_norm": gnorm}
        for g in frozen:
            row[f"{g}_checksum"] = groups[g].checksum()
        log.rows.append(row)
    log.seconds = time.perf_counter() - t0
    for module in groups.values():
        module.requires_grad_(True)
        module.zero_grad()
    return log
