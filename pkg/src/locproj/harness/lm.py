"""A small causal decoder and the byte-level tokenizer it reads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import functional as F
from ..nn import Attention, FeedForward, LayerNorm, Linear, Module, Parameter
from ..tensor import Tensor, concat, take_rows

# UTF-8 never emits 0xFE or 0xFF, so those byte ids are free for the wrappers
IMAGE_START = 254
IMAGE_END = 255
PAD = 0


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_text(ids) -> str:
    return bytes(int(i) for i in ids if int(i) < IMAGE_START).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class LMConfig:
    vocab: int = 256
    dim: int = 64
    depth: int = 2
    heads: int = 4
    max_len: int = 1024
    seed: int = 1

    def __post_init__(self):
        if self.vocab < 256:
            raise ValueError("the byte tokenizer needs a vocabulary of at least 256 ids")
        if self.dim % self.heads:
            raise ValueError(f"head count {self.heads} does not divide width {self.dim}")
        if self.depth < 1 or self.max_len < 2:
            raise ValueError("depth must be >= 1 and max_len >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> LMConfig:
        return cls(**d)


class DecoderBlock(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, 4 * dim, rng)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        a, _ = self.attn(self.norm1(x), mask=mask)
        x = x + a
        return x + self.ffn(self.norm2(x))


def causal_mask(T: int) -> np.ndarray:
    return np.triu(np.full((T, T), -np.inf), k=1)


class TinyLM(Module):
    """Pre-norm causal transformer over a prefix of embeddings followed by token ids."""

    def __init__(self, cfg: LMConfig | None = None):
        self.cfg = cfg = cfg or LMConfig()
        rng = np.random.default_rng(cfg.seed)
        self.embed = Parameter(rng.normal(0.0, 0.02, (cfg.vocab, cfg.dim)))
        self.pos = Parameter(rng.normal(0.0, 0.02, (cfg.max_len, cfg.dim)))
        self.blocks = [DecoderBlock(cfg.dim, cfg.heads, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.dim)
        self.head = Linear(cfg.dim, cfg.vocab, rng)

    def embed_tokens(self, ids: np.ndarray) -> Tensor:
        return take_rows(self.embed, np.asarray(ids, dtype=np.int64))

    def forward(self, prefix: Tensor | None, ids: np.ndarray) -> Tensor:
        """Logits [B,T,V] for the sequence ``prefix`` [B,P,D] followed by ``ids`` [B,L]."""
        x = self.embed_tokens(ids)
        if prefix is not None:
            x = concat([prefix, x], axis=1)
        T = x.shape[1]
        if T > self.cfg.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self.cfg.max_len}")
        x = x + self.pos[:T]
        mask = causal_mask(T)
        for block in self.blocks:
            x = block(x, mask)
        return self.head(self.norm(x))

    def next_token_probs(self, prefix: Tensor | None, ids: np.ndarray) -> np.ndarray:
        logits = self.forward(prefix, ids).data[:, -1]
        return np.exp(F.log_softmax(Tensor(logits)).data)
