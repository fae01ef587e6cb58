"""Learnable-query resampler (perceiver-style abstractor)."""

from __future__ import annotations

import numpy as np

from ..nn import Attention, FeedForward, LayerNorm, Linear, Module, Parameter
from ..tensor import Tensor
from .base import AttentionTrace, FeatureMap, Projector, ProjectorSpec, VisualTokens


class CrossAttentionBlock(Module):
    """Queries attend over the features, then a feed-forward; post-norm residuals."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.attn = Attention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn = FeedForward(dim, 4 * dim, rng)
        self.norm2 = LayerNorm(dim)

    def forward(self, z: Tensor, x: Tensor) -> tuple[Tensor, np.ndarray]:
        a, weights = self.attn(z, x)
        z = self.norm1(z + a)
        z = self.norm2(z + self.ffn(z))
        return z, weights


class Resampler(Projector):
    def __init__(self, spec: ProjectorSpec, rng: np.random.Generator):
        self.spec = spec
        D = spec.width
        self.input_proj = Linear(spec.d_in, D, rng)
        if spec.pos_emb:
            H, W = spec.grid
            self.pos = Parameter(rng.normal(0.0, 0.02, (H * W, D)))
        self.queries = Parameter(rng.normal(0.0, 1.0, (spec.num_tokens, D)))
        self.blocks = [CrossAttentionBlock(D, spec.heads, rng) for _ in range(spec.depth)]
        self.readout = Linear(D, spec.d_out, rng)

    def forward_with_trace(self, fm: FeatureMap) -> tuple[VisualTokens, AttentionTrace]:
        self._check_input(fm)
        x = self.input_proj(fm.as_batch())
        if self.spec.pos_emb:
            if tuple(fm.grid) != tuple(self.spec.grid):
                raise ValueError(f"positional table built for {self.spec.grid}, got grid {fm.grid}")
            x = x + self.pos
        B = x.shape[0]
        z = self.queries.reshape((1,) + self.queries.shape) * np.ones((B, 1, 1))
        maps = []
        for block in self.blocks:
            z, weights = block(z, x)
            maps.append(weights.mean(axis=1))  # average heads -> [B,M,N]
        H, W = fm.grid
        trace = np.stack(maps, axis=1).reshape(B, len(self.blocks), -1, H, W)
        tokens = self._finish(self.readout(z), fm)
        return tokens, AttentionTrace(trace if fm.batched else trace[0], kind="resampler")
