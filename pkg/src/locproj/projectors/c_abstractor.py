"""Convolutional abstractor: conv blocks, adaptive pooling to sqrt(M) x sqrt(M), conv blocks."""

from __future__ import annotations

import numpy as np

from .. import functional as F
from ..nn import Conv2d, LayerNorm2d, Linear, Module, Parameter
from ..tensor import Tensor, sigmoid
from .base import AttentionTrace, FeatureMap, ProjectorConfigError, Projector, ProjectorSpec, VisualTokens


class SqueezeExcite(Module):
    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        hidden = max(1, channels // reduction)
        self.reduce = Linear(channels, hidden, rng)
        self.expand = Linear(hidden, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        s = x.mean(axis=(2, 3))
        s = sigmoid(self.expand(F.silu(self.reduce(s))))
        return x * s.reshape(s.shape + (1, 1))


def _zero(p: Parameter | None) -> None:
    if p is not None:
        p.data = np.zeros_like(p.data)


class BottleneckBlock(Module):
    """ResNet bottleneck (1x1 -> 3x3 -> SE -> 1x1) with an identity shortcut."""

    def __init__(self, dim: int, rng: np.random.Generator, expansion: int = 4, se_reduction: int = 16):
        mid = max(1, dim // expansion)
        self.conv1 = Conv2d(dim, mid, 1, rng)
        self.norm1 = LayerNorm2d(mid)
        self.conv2 = Conv2d(mid, mid, 3, rng, padding=1)
        self.norm2 = LayerNorm2d(mid)
        self.se = SqueezeExcite(mid, se_reduction, rng)
        self.conv3 = Conv2d(mid, dim, 1, rng)

    def zero_init_residual(self) -> None:
        _zero(self.conv3.weight)
        _zero(self.conv3.bias)

    def forward(self, x: Tensor) -> Tensor:
        y = F.silu(self.norm1(self.conv1(x)))
        y = F.silu(self.norm2(self.conv2(y)))
        return x + self.conv3(self.se(y))


class ConvNextBlock(Module):
    def __init__(self, dim: int, rng: np.random.Generator, kernel: int = 7):
        self.dwconv = Conv2d(dim, dim, kernel, rng, padding=kernel // 2, groups=dim)
        self.norm = LayerNorm2d(dim)
        self.pw1 = Linear(dim, 4 * dim, rng)
        self.pw2 = Linear(4 * dim, dim, rng)

    def zero_init_residual(self) -> None:
        _zero(self.pw2.weight)
        _zero(self.pw2.bias)

    def forward(self, x: Tensor) -> Tensor:
        y = self.norm(self.dwconv(x)).transpose(0, 2, 3, 1)
        y = self.pw2(F.gelu(self.pw1(y))).transpose(0, 3, 1, 2)
        return x + y


class StandardConvBlock(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.conv = Conv2d(dim, dim, 3, rng, padding=1)
        self.norm = LayerNorm2d(dim)

    def zero_init_residual(self) -> None:
        _zero(self.conv.weight)
        _zero(self.conv.bias)

    def forward(self, x: Tensor) -> Tensor:
        return x + F.silu(self.norm(self.conv(x)))


_BLOCKS = {"resnet": BottleneckBlock, "convnext": ConvNextBlock, "standard": StandardConvBlock}


class CAbstractor(Projector):
    def __init__(self, spec: ProjectorSpec, rng: np.random.Generator, zero_init_residual: bool = False):
        self.spec = spec
        block = _BLOCKS[spec.block]
        D = spec.width
        self.stem = Linear(spec.d_in, D, rng) if D != spec.d_in else None
        self.pre = [block(D, rng) for _ in range(spec.depth)]
        self.post = [block(D, rng) for _ in range(spec.depth)]
        self.readout = Linear(D, spec.d_out, rng)
        if zero_init_residual:
            for b in self.pre + self.post:
                b.zero_init_residual()

    def forward_with_trace(self, fm: FeatureMap) -> tuple[VisualTokens, AttentionTrace | None]:
        self._check_input(fm)
        s = self.spec.side
        H, W = fm.grid
        if (s > H or s > W) and not self.spec.allow_upsample:
            raise ProjectorConfigError(
                f"M={self.spec.num_tokens} exceeds N={fm.N}; set allow_upsample to interpolate")
        x = fm.as_batch()
        if self.stem is not None:
            x = self.stem(x)
        B, N, D = x.shape
        x = x.transpose(0, 2, 1).reshape(B, D, H, W)
        for b in self.pre:
            x = b(x)
        x = F.adaptive_avg_pool2d(x, (s, s), allow_upsample=self.spec.allow_upsample)
        for b in self.post:
            x = b(x)
        x = x.reshape(B, D, s * s).transpose(0, 2, 1)
        return self._finish(self.readout(x), fm), None
