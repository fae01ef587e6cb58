from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..nn import Module
from ..tensor import Tensor

KINDS = ("linear", "mlp", "resampler", "c_abstractor", "d_abstractor")
BLOCKS = ("resnet", "convnext", "standard")
DEFAULT_LAYERS = {"resampler": 6, "c_abstractor": 3, "d_abstractor": 6}


class ProjectorConfigError(ValueError):
    pass


class InflexibleProjectorError(ProjectorConfigError):
    pass


def is_square(n: int) -> bool:
    return n > 0 and math.isqrt(n) ** 2 == n


@dataclass(frozen=True)
class ProjectorSpec:
    """Selects one projector family and its hyperparameters.

    ``num_tokens`` is M.  ``num_layers`` is the resampler depth, L for the
    C-Abstractor (blocks before and after pooling) and the block count of the
    D-Abstractor; ``None`` picks the per-kind default.
    """

    kind: str
    num_tokens: int
    d_in: int = 32
    d_out: int = 64
    hidden: int | None = None
    mlp_layers: int = 2
    num_layers: int | None = None
    heads: int = 4
    num_offsets: int = 4
    pos_emb: bool = False
    self_attn: bool = False
    allow_upsample: bool = False
    block: str = "resnet"
    pooled_queries: bool = True
    manual_ref_points: bool = True
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if self.kind not in KINDS:
            raise ProjectorConfigError(f"unknown projector kind {self.kind!r}; expected one of {KINDS}")
        if self.num_tokens <= 0:
            raise ProjectorConfigError(f"number of visual tokens must be positive, got {self.num_tokens}")
        if self.d_in <= 0 or self.d_out <= 0 or self.width <= 0:
            raise ProjectorConfigError("widths must be positive")
        if self.kind == "mlp" and not 2 <= self.mlp_layers <= 6:
            raise ProjectorConfigError(f"mlp depth must be in 2..6, got {self.mlp_layers}")
        if self.kind in ("c_abstractor", "d_abstractor") and not is_square(self.num_tokens):
            raise ProjectorConfigError(f"{self.kind} emits a square token grid; M={self.num_tokens} "
                                       "is not a perfect square")
        if self.kind == "d_abstractor" and self.num_offsets < 1:
            raise ProjectorConfigError("d_abstractor needs at least one sampling offset")
        if self.kind in ("resampler", "d_abstractor") and self.width % self.heads:
            raise ProjectorConfigError(f"head count {self.heads} does not divide width {self.width}")
        if self.block not in BLOCKS:
            raise ProjectorConfigError(f"unknown block {self.block!r}")
        if self.pos_emb and self.grid is None:
            raise ProjectorConfigError("positional embeddings need the feature grid")
        if self.depth < 1:
            raise ProjectorConfigError("depth must be at least 1")

    @property
    def width(self) -> int:
        return self.d_in if self.hidden is None else self.hidden

    @property
    def depth(self) -> int:
        if self.num_layers is not None:
            return self.num_layers
        return DEFAULT_LAYERS.get(self.kind, 1)

    @property
    def side(self) -> int:
        return math.isqrt(self.num_tokens)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid) if self.grid is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ProjectorSpec:
        d = dict(d)
        if d.get("M") is not None:
            d["num_tokens"] = d.pop("M")
        if d.get("grid") is not None:
            d["grid"] = tuple(d["grid"])
        return cls(**d)


@dataclass
class FeatureMap:
    """N = H*W region features of width D_v, optionally with a leading batch axis."""

    features: Tensor
    grid: tuple[int, int]

    def __post_init__(self):
        if not isinstance(self.features, Tensor):
            self.features = Tensor(self.features)
        H, W = self.grid
        if self.features.ndim not in (2, 3):
            raise ValueError(f"features must be [N,D] or [B,N,D], got {self.features.shape}")
        if self.features.shape[-2] != H * W:
            raise ValueError(f"N={self.features.shape[-2]} does not match grid {H}x{W}")

    @property
    def N(self) -> int:
        return self.features.shape[-2]

    @property
    def dim(self) -> int:
        return self.features.shape[-1]

    @property
    def batched(self) -> bool:
        return self.features.ndim == 3

    def as_batch(self) -> Tensor:
        f = self.features
        return f if self.batched else f.reshape((1,) + f.shape)


@dataclass
class VisualTokens:
    tokens: Tensor

    def __post_init__(self):
        if not np.isfinite(self.tokens.data).all():
            raise FloatingPointError("projector produced non-finite visual tokens")

    @property
    def M(self) -> int:
        return self.tokens.shape[-2]


@dataclass
class AttentionTrace:
    """Attention mass over the feature grid: maps[layer, query, H, W]."""

    maps: np.ndarray
    kind: str = ""
    reference_points: np.ndarray | None = field(default=None, repr=False)

    @property
    def layers(self) -> int:
        return self.maps.shape[0]

    def query_mass(self) -> np.ndarray:
        return self.maps.sum(axis=(-2, -1))


class Projector(Module):
    spec: ProjectorSpec

    def _check_input(self, fm: FeatureMap) -> None:
        if fm.dim != self.spec.d_in:
            raise ValueError(f"feature width {fm.dim} != projector input width {self.spec.d_in}")

    def _finish(self, out: Tensor, fm: FeatureMap) -> VisualTokens:
        if not fm.batched:
            out = out.reshape(out.shape[1:])
        return VisualTokens(out)

    def forward(self, fm: FeatureMap) -> VisualTokens:
        return self.forward_with_trace(fm)[0]

    def forward_with_trace(self, fm: FeatureMap) -> tuple[VisualTokens, AttentionTrace | None]:
        raise NotImplementedError

    def param_report(self) -> dict[str, int]:
        """Parameter counts per top-level component, plus a total."""
        report: dict[str, int] = {}
        for name, p in self.named_parameters():
            group = name.split(".")[0]
            report[group] = report.get(group, 0) + p.size
        report["total"] = sum(report.values())
        return report
