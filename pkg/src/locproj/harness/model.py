"""Encoder + projector + LM assembly, batching, the response loss and the likelihood probe."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import functional as F
from ..instructize import InstructionExample
from ..nn import Module
from ..projectors import ProjectorSpec, build_projector, load_checkpoint, save_checkpoint
from ..projectors.base import Projector
from ..tensor import Tensor, concat, no_grad
from .encoder import EncoderConfig, StubVisionEncoder
from .lm import IMAGE_END, IMAGE_START, PAD, LMConfig, TinyLM, encode_text
from .metrics import BenchScores


class AssemblyError(ValueError):
    pass


class VisionLanguageModel(Module):
    def __init__(self, encoder: StubVisionEncoder, projector: Projector, lm: TinyLM,
                 image_indicator: bool = False):
        self.encoder = encoder
        self.projector = projector
        self.lm = lm
        self.image_indicator = image_indicator

    @property
    def num_visual_positions(self) -> int:
        return self.projector.spec.num_tokens + (2 if self.image_indicator else 0)

    def visual_prefix(self, image_ids: Sequence[str]) -> Tensor:
        tokens = self.projector(self.encoder(list(image_ids))).tokens  # [B,M,D_t]
        if not self.image_indicator:
            return tokens
        B = tokens.shape[0]
        start = self.lm.embed_tokens(np.full((B, 1), IMAGE_START))
        end = self.lm.embed_tokens(np.full((B, 1), IMAGE_END))
        return concat([start, tokens, end], axis=1)

    def forward(self, image_ids: Sequence[str], ids: np.ndarray) -> Tensor:
        return self.lm(self.visual_prefix(image_ids), ids)

    def sequence_length(self, text_len: int) -> int:
        return self.num_visual_positions + text_len

    def config(self) -> dict:
        return {"projector": self.projector.spec.to_dict(), "encoder": self.encoder.cfg.to_dict(),
                "lm": self.lm.cfg.to_dict(), "image_indicator": self.image_indicator}

    def group_checksums(self) -> dict[str, str]:
        return {"encoder": self.encoder.checksum(), "projector": self.projector.checksum(),
                "lm": self.lm.checksum()}


def assemble(projector_spec: ProjectorSpec | dict, encoder_cfg: EncoderConfig | dict | None = None,
             lm_cfg: LMConfig | dict | None = None, image_indicator: bool = False,
             seed: int = 0) -> VisionLanguageModel:
    if isinstance(projector_spec, dict):
        projector_spec = ProjectorSpec.from_dict(projector_spec)
    if isinstance(encoder_cfg, dict):
        encoder_cfg = EncoderConfig.from_dict(encoder_cfg)
    if isinstance(lm_cfg, dict):
        lm_cfg = LMConfig.from_dict(lm_cfg)
    encoder = StubVisionEncoder(encoder_cfg)
    lm = TinyLM(lm_cfg)
    if projector_spec.d_in != encoder.cfg.dim:
        raise AssemblyError(f"projector input width {projector_spec.d_in} != encoder width "
                            f"{encoder.cfg.dim}")
    if projector_spec.d_out != lm.cfg.dim:
        raise AssemblyError(f"projector output width {projector_spec.d_out} != LM width {lm.cfg.dim}")
    if projector_spec.pos_emb and tuple(projector_spec.grid) != tuple(encoder.cfg.grid):
        raise AssemblyError(f"projector grid {projector_spec.grid} != encoder grid {encoder.cfg.grid}")
    projector = build_projector(projector_spec, seed)
    return VisionLanguageModel(encoder, projector, lm, image_indicator)


def save_model(path, model: VisionLanguageModel, extra: dict | None = None) -> None:
    header = {"model": model.config(), **(extra or {})}
    save_checkpoint(path, model.state_dict(), header)


def load_model(path) -> VisionLanguageModel:
    header, state = load_checkpoint(path)
    cfg = header["model"]
    model = assemble(cfg["projector"], cfg["encoder"], cfg["lm"], cfg.get("image_indicator", False))
    model.load_state_dict(state)
    return model


# -- batching ---------------------------------------------------------------

@dataclass
class Batch:
    """Right-padded text ids plus, per text position, whether it is a response token."""

    image_ids: list[str]
    ids: np.ndarray        # [B,L] int
    response: np.ndarray   # [B,L] bool

    @property
    def text_len(self) -> int:
        return self.ids.shape[1]


def tokenize_example(example: InstructionExample, max_len: int | None = None):
    ids: list[int] = []
    resp: list[bool] = []
    for text, is_target in example.segments():
        toks = encode_text(text)
        ids.extend(toks)
        resp.extend([is_target] * len(toks))
    if max_len is not None:
        ids, resp = ids[:max_len], resp[:max_len]
    return ids, resp


def make_batch(examples: Sequence[InstructionExample], max_len: int | None = None) -> Batch:
    rows = [tokenize_example(ex, max_len) for ex in examples]
    L = max(len(r[0]) for r in rows)
    ids = np.full((len(rows), L), PAD, dtype=np.int64)
    resp = np.zeros((len(rows), L), dtype=bool)
    for i, (t, r) in enumerate(rows):
        ids[i, :len(t)] = t
        resp[i, :len(r)] = r
    return Batch([ex.image_id for ex in examples], ids, resp)


def loss_targets(batch: Batch, prefix_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Next-token targets and loss mask aligned with the full [prefix ∥ text] logits.

    Logit position t predicts token t+1, so text token j (absolute position
    prefix_len + j) is scored at position prefix_len + j - 1.
    """
    if prefix_len < 1:
        raise ValueError("the visual prefix must hold at least one position")
    B, L = batch.ids.shape
    T = prefix_len + L
    targets = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    targets[:, prefix_len - 1:T - 1] = batch.ids
    mask[:, prefix_len - 1:T - 1] = batch.response
    return targets, mask


def response_nll(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean -log p(target) over masked positions; input-span logits never enter."""
    if not np.asarray(mask).any():
        raise ValueError("empty response: the loss needs at least one response token")
    return F.masked_nll(logits, targets, mask)


def response_loss(model: VisionLanguageModel, batch: Batch) -> Tensor:
    if not batch.response.any(axis=1).all():
        raise ValueError("empty response: every example needs at least one response token")
    logits = model(batch.image_ids, batch.ids)
    targets, mask = loss_targets(batch, model.num_visual_positions)
    return response_nll(logits, targets, mask)


# -- likelihood probe -------------------------------------------------------

@dataclass
class ProbeItem:
    image_id: str
    prompt: str
    options: list[str]
    answer: int

    def __post_init__(self):
        if not 0 <= self.answer < len(self.options):
            raise ValueError(f"answer index {self.answer} out of range for {len(self.options)} options")

    @classmethod
    def from_dict(cls, d: dict) -> ProbeItem:
        return cls(str(d["image_id"]), d["prompt"], list(d["options"]), int(d["answer"]))

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "prompt": self.prompt, "options": self.options,
                "answer": self.answer}


@dataclass
class ProbeResult:
    predictions: list[int]
    correct: list[bool] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.correct)) if self.correct else 0.0


def sequence_logprobs(model: VisionLanguageModel, examples: Sequence[InstructionExample],
                      batch_size: int = 64) -> np.ndarray:
    """Summed log-likelihood of each example's target tokens."""
    out = []
    with no_grad():
        for i in range(0, len(examples), batch_size):
            batch = make_batch(examples[i:i + batch_size])
            logits = model(batch.image_ids, batch.ids).data
            targets, mask = loss_targets(batch, model.num_visual_positions)
            logp = F.log_softmax(Tensor(logits)).data
            picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
            out.append((picked * mask).sum(axis=1))
    return np.concatenate(out)


def _option_rows(model: VisionLanguageModel, examples: Sequence[InstructionExample],
                 batch_size: int) -> np.ndarray:
    """Log-probability rows [n, V] at the first response position of each example."""
    rows = []
    with no_grad():
        for i in range(0, len(examples), batch_size):
            batch = make_batch(examples[i:i + batch_size])
            logits = model(batch.image_ids, batch.ids).data
            _, mask = loss_targets(batch, model.num_visual_positions)
            first = mask.argmax(axis=1)
            picked = logits[np.arange(len(first)), first]
            rows.append(F.log_softmax(Tensor(picked)).data)
    return np.concatenate(rows)


def run_probe(model: VisionLanguageModel, items: Sequence[ProbeItem], batch_size: int = 64,
              shared_prefix: bool = True) -> ProbeResult:
    """Pick the highest-likelihood option per item.

    When every option of an item is a single token, the causal LM gives all of
    them from one forward pass over the prompt, so they are scored together.
    """
    scores: list = [None] * len(items)
    fast = [k for k, it in enumerate(items)
            if shared_prefix and all(len(encode_text(o)) == 1 for o in it.options)]
    if fast:
        rows = _option_rows(model, [InstructionExample(items[k].image_id, [(items[k].prompt, items[k].options[0])])
                                    for k in fast], batch_size)
        for k, row in zip(fast, rows):
            scores[k] = row[[int(encode_text(o)[0]) for o in items[k].options]]
    slow = [k for k in range(len(items)) if scores[k] is None]
    flat = [InstructionExample(items[k].image_id, [(items[k].prompt, opt)])
            for k in slow for opt in items[k].options]
    if flat:
        seq = sequence_logprobs(model, flat, batch_size)
        pos = 0
        for k in slow:
            n = len(items[k].options)
            scores[k] = seq[pos:pos + n]
            pos += n
    preds, correct = [], []
    for item, s in zip(items, scores):
        p = int(np.argmax(s))  # ties resolve to the first option
        preds.append(p)
        correct.append(p == item.answer)
    return ProbeResult(preds, correct)


def evaluate_probe(model: VisionLanguageModel, items: Sequence[ProbeItem], batch_size: int = 64,
                   name: str = "probe") -> BenchScores:
    acc = run_probe(model, items, batch_size).accuracy
    return BenchScores({name: 100.0 * acc}, {name: 100.0})


def read_probe(path) -> list[ProbeItem]:
    lines = Path(path).read_text().splitlines()
    return [ProbeItem.from_dict(json.loads(l)) for l in lines if l.strip()]
