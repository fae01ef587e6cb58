"""One-to-one projectors: a single linear map or a k-layer MLP per feature."""

from __future__ import annotations

import numpy as np

from .. import functional as F
from ..nn import Linear
from .base import AttentionTrace, FeatureMap, InflexibleProjectorError, Projector, ProjectorSpec, VisualTokens


def _require_one_to_one(spec: ProjectorSpec, fm: FeatureMap) -> None:
    if spec.num_tokens != fm.N:
        detail = "" if spec.kind == "linear" else f" ({spec.mlp_layers}-layer mlp)"
        raise InflexibleProjectorError(
            f"linear projector is inflexible{detail}: requested M={spec.num_tokens} "
            f"but the feature map has N={fm.N}; one-to-one projection needs M == N")


class LinearProjector(Projector):
    def __init__(self, spec: ProjectorSpec, rng: np.random.Generator):
        self.spec = spec
        self.proj = Linear(spec.d_in, spec.d_out, rng)

    def forward_with_trace(self, fm: FeatureMap) -> tuple[VisualTokens, AttentionTrace | None]:
        self._check_input(fm)
        _require_one_to_one(self.spec, fm)
        return self._finish(self.proj(fm.as_batch()), fm), None


class MLPProjector(Projector):
    def __init__(self, spec: ProjectorSpec, rng: np.random.Generator):
        self.spec = spec
        dims = [spec.d_in] + [spec.d_out] * spec.mlp_layers
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward_with_trace(self, fm: FeatureMap) -> tuple[VisualTokens, AttentionTrace | None]:
        self._check_input(fm)
        _require_one_to_one(self.spec, fm)
        x = fm.as_batch()
        for i, layer in enumerate(self.layers):
            if i:
                x = F.gelu(x)
            x = layer(x)
        return self._finish(x, fm), None
