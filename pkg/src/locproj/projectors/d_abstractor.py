"""Deformable-attention abstractor.

Each query owns a reference point on the feature grid and predicts K offsets
around it together with K attention logits; the aggregated samples update the
query.  Queries start from an adaptive pool of the feature map and reference
points start on the matching cell-center grid.
"""

from __future__ import annotations

import math

import numpy as np

from .. import functional as F
from ..nn import Attention, FeedForward, LayerNorm, Linear, Module, Parameter
from ..tensor import Tensor, sigmoid
from .base import AttentionTrace, FeatureMap, ProjectorConfigError, Projector, ProjectorSpec, VisualTokens


def grid_reference_points(side: int) -> np.ndarray:
    """Cell centers of a side x side grid in normalized (row, col) order, [side*side, 2]."""
    c = (np.arange(side) + 0.5) / side
    rows, cols = np.meshgrid(c, c, indexing="ij")
    return np.stack([rows.reshape(-1), cols.reshape(-1)], axis=-1)


class DeformableBlock(Module):
    def __init__(self, dim: int, feat_dim: int, num_offsets: int, num_queries: int, heads: int,
                 rng: np.random.Generator, self_attn: bool = False):
        self.K = num_offsets
        self.offset_scale = 1.0 / math.sqrt(num_queries)
        if self_attn:
            self.norm0 = LayerNorm(dim)
            self.self_attn = Attention(dim, heads, rng)
        self.offsets = Linear(dim, 2 * num_offsets, rng)
        self.logits = Linear(dim, num_offsets, rng)
        self.value = Linear(feat_dim, dim, rng)
        self.norm1 = LayerNorm(dim)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, 4 * dim, rng)

    def sample_plan(self, z: Tensor, ref: Tensor) -> tuple[Tensor, Tensor]:
        """Sampling points [B,M,K,2] and attention weights [B,M,K] for queries z."""
        B, M, _ = z.shape
        off = self.offsets(z).reshape(B, M, self.K, 2) * self.offset_scale
        pts = ref.reshape(ref.shape[:-1] + (1, 2)) + off
        return pts, F.softmax(self.logits(z), axis=-1)

    def aggregate(self, z: Tensor, feats: Tensor, grid: tuple[int, int], ref: Tensor):
        """Weighted sum of value-projected samples; returns (agg [B,M,D], pts, weights)."""
        B, M, D = z.shape
        H, W = grid
        pts, A = self.sample_plan(z, ref)
        # bilinear weights sum to one, so projecting before sampling is exact
        vmap = self.value(feats).transpose(0, 2, 1).reshape(B, D, H, W)
        samples = F.bilinear_sample(vmap, pts.reshape(B, M * self.K, 2)).reshape(B, M, self.K, D)
        agg = (samples * A.reshape(B, M, self.K, 1)).sum(axis=2)
        return agg, pts, A

    def forward(self, z: Tensor, feats: Tensor, grid: tuple[int, int], ref: Tensor):
        if hasattr(self, "self_attn"):
            a, _ = self.self_attn(self.norm0(z))
            z = z + a
        agg, pts, A = self.aggregate(z, feats, grid, ref)
        z = self.norm1(z + agg)
        z = z + self.ffn(self.norm2(z))
        return z, pts.data, A.data


class DAbstractor(Projector):
    def __init__(self, spec: ProjectorSpec, rng: np.random.Generator):
        self.spec = spec
        D, M = spec.width, spec.num_tokens
        if spec.pooled_queries:
            self.query_proj = Linear(spec.d_in, D, rng)
        else:
            self.queries = Parameter(rng.normal(0.0, 1.0, (M, D)))
        if not spec.manual_ref_points:
            # centralized start: sigmoid(0) = 0.5 for every query
            self.ref_head = Linear(D, 2, rng, std=0.0)
        self.blocks = [DeformableBlock(D, spec.d_in, spec.num_offsets, M, spec.heads, rng,
                                       self_attn=spec.self_attn) for _ in range(spec.depth)]
        self.readout = Linear(D, spec.d_out, rng)
        self.ref_grid = grid_reference_points(spec.side)

    def initial_queries(self, fm: FeatureMap) -> Tensor:
        feats = fm.as_batch()
        B, N, _ = feats.shape
        if not self.spec.pooled_queries:
            return self.queries.reshape((1,) + self.queries.shape) * np.ones((B, 1, 1))
        s = self.spec.side
        H, W = fm.grid
        if (s > H or s > W) and not self.spec.allow_upsample:
            raise ProjectorConfigError(
                f"M={self.spec.num_tokens} exceeds N={fm.N}; set allow_upsample to pool queries")
        x = feats.transpose(0, 2, 1).reshape(B, fm.dim, H, W)
        pooled = F.adaptive_avg_pool2d(x, (s, s), allow_upsample=self.spec.allow_upsample)
        return self.query_proj(pooled.reshape(B, fm.dim, s * s).transpose(0, 2, 1))

    def reference_points(self, z0: Tensor) -> Tensor:
        if self.spec.manual_ref_points:
            return Tensor(np.broadcast_to(self.ref_grid, (z0.shape[0],) + self.ref_grid.shape).copy())
        return sigmoid(self.ref_head(z0))

    def forward_with_trace(self, fm: FeatureMap) -> tuple[VisualTokens, AttentionTrace]:
        self._check_input(fm)
        feats = fm.as_batch()
        z = self.initial_queries(fm)
        ref = self.reference_points(z)
        H, W = fm.grid
        maps = []
        for block in self.blocks:
            z, pts, A = block(z, feats, fm.grid, ref)
            spread = F.bilinear_weights(pts, H, W)  # [B,M,K,H,W]
            maps.append((spread * A[..., None, None]).sum(axis=2))
        trace = np.stack(maps, axis=1)
        tokens = self._finish(self.readout(z), fm)
        ref_np = ref.data if fm.batched else ref.data[0]
        return tokens, AttentionTrace(trace if fm.batched else trace[0], kind="d_abstractor",
                                      reference_points=ref_np)
