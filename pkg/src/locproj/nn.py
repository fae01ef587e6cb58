"""Parameter containers and the small layer zoo shared by projectors and the LM."""

from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Tracks Parameters and sub-Modules assigned as attributes (lists included)."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def requires_grad_(self, flag: bool) -> Module:
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def checksum(self) -> str:
        """SHA-256 over parameter names and raw bytes, in registration order."""
        digest = hashlib.sha256()
        for name, p in self.named_parameters():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 std: float | None = None):
        std = 1.0 / np.sqrt(d_in) if std is None else std
        self.weight = Parameter(rng.normal(0.0, std, (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias)


class LayerNorm2d(LayerNorm):
    """LayerNorm over the channel axis of [B,C,H,W] maps."""

    def forward(self, x: Tensor) -> Tensor:
        y = F.layer_norm(x.transpose(0, 2, 3, 1), self.gain, self.bias)
        return y.transpose(0, 3, 1, 2)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, padding: int = 0,
                 stride: int = 1, groups: int = 1, bias: bool = True):
        fan_in = (c_in // groups) * k * k
        self.weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (c_out, c_in // groups, k, k)))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.padding, self.stride, self.groups = padding, stride, groups

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding,
                        groups=self.groups)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class Attention(Module):
    """Multi-head attention with separate q/k/v/output projections."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, kv_dim: int | None = None):
        if dim % heads:
            raise ValueError(f"head count {heads} does not divide width {dim}")
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        # a key bias shifts every score of a query equally; softmax cancels it
        self.k = Linear(kv_dim, dim, rng, bias=False)
        self.v = Linear(kv_dim, dim, rng)
        self.o = Linear(dim, dim, rng)

    def forward(self, x: Tensor, context: Tensor | None = None,
                mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        context = x if context is None else context
        out, weights = F.multi_head_attention(self.q(x), self.k(context), self.v(context),
                                              self.heads, mask)
        return self.o(out), weights
