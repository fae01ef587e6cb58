"""A frozen, deterministic stand-in for a pretrained vision encoder."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from ..nn import Module, Parameter
from ..projectors.base import FeatureMap
from ..tensor import Tensor

FEATURE_LAYERS = ("last", "second_last")


@dataclass(frozen=True)
class EncoderConfig:
    grid: tuple[int, int] = (16, 16)
    dim: int = 32
    layers: int = 3
    feature_layer: str = "second_last"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if self.feature_layer not in FEATURE_LAYERS:
            raise ValueError(f"feature_layer must be one of {FEATURE_LAYERS}, got {self.feature_layer!r}")
        if self.layers < 2:
            raise ValueError("the encoder needs at least two layers to expose the second-last one")
        if self.dim <= 0 or min(self.grid) <= 0:
            raise ValueError("encoder extents must be positive")

    @property
    def N(self) -> int:
        return self.grid[0] * self.grid[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EncoderConfig:
        return cls(**d)


def image_seed(image_id: str) -> int:
    return int.from_bytes(hashlib.sha256(image_id.encode()).digest()[:8], "little")


class StubVisionEncoder(Module):
    """Stack of fixed tanh layers over a per-image Gaussian field.

    The input field of an image is drawn from a generator seeded by the hash of
    its id and blended with a fixed positional pattern, so features differ
    per image and per region.  Weights come from ``cfg.seed`` and never train.
    """

    def __init__(self, cfg: EncoderConfig | None = None):
        self.cfg = cfg = cfg or EncoderConfig()
        rng = np.random.default_rng(cfg.seed)
        D = cfg.dim
        self.pos = Parameter(rng.normal(0.0, 1.0, (cfg.N, D)))
        self.weights = [Parameter(rng.normal(0.0, 1.0 / np.sqrt(D), (D, D))) for _ in range(cfg.layers)]
        self.biases = [Parameter(rng.normal(0.0, 0.1, D)) for _ in range(cfg.layers)]
        self.requires_grad_(False)
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    def hidden_states(self, image_id: str) -> list[np.ndarray]:
        field = np.random.default_rng(image_seed(image_id)).normal(0.0, 1.0, (self.cfg.N, self.cfg.dim))
        h = 0.5 * (field + self.pos.data)
        states = []
        for W, b in zip(self.weights, self.biases):
            h = np.tanh(h @ W.data + b.data)
            states.append(h)
        return states

    def features(self, image_id: str, feature_layer: str | None = None) -> np.ndarray:
        layer = feature_layer or self.cfg.feature_layer
        if layer not in FEATURE_LAYERS:
            raise ValueError(f"unknown feature layer {layer!r}")
        key = (image_id, layer)
        if key not in self._cache:
            states = self.hidden_states(image_id)
            self._cache[key] = states[-1] if layer == "last" else states[-2]
        return self._cache[key]

    def forward(self, image_ids, feature_layer: str | None = None) -> FeatureMap:
        if isinstance(image_ids, str):
            return FeatureMap(Tensor(self.features(image_ids, feature_layer).copy()), self.cfg.grid)
        stacked = np.stack([self.features(i, feature_layer) for i in image_ids])
        return FeatureMap(Tensor(stacked), self.cfg.grid)
