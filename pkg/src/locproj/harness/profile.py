"""Analytic FLOP counts and wall-clock timing of one training step."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..instructize import InstructionExample
from ..projectors import ProjectorSpec
from .encoder import EncoderConfig
from .lm import LMConfig
from .model import assemble, make_batch, response_loss

# backward costs two forward passes (grads w.r.t. inputs and weights)
BACKWARD_FACTOR = 3


def _conv(P: int, c_in: int, c_out: int, k: int = 1, groups: int = 1) -> int:
    return 2 * P * c_out * (c_in // groups) * k * k


def _dense(rows: int, d_in: int, d_out: int) -> int:
    return 2 * rows * d_in * d_out


def _attention(Lq: int, Lk: int, D: int, kv_dim: int | None = None) -> int:
    kv_dim = D if kv_dim is None else kv_dim
    proj = _dense(Lq, D, D) * 2 + _dense(Lk, kv_dim, D) * 2
    return proj + 2 * (2 * Lq * Lk * D)


def _c_block(spec: ProjectorSpec, P: int) -> int:
    D = spec.width
    if spec.block == "resnet":
        mid = max(1, D // 4)
        se = max(1, mid // 16)
        return (_conv(P, D, mid) + _conv(P, mid, mid, 3) + _dense(1, mid, se) + _dense(1, se, mid)
                + _conv(P, mid, D))
    if spec.block == "convnext":
        return _conv(P, D, D, 7, groups=D) + _dense(P, D, 4 * D) + _dense(P, 4 * D, D)
    return _conv(P, D, D, 3)


def projector_forward_flops(spec: ProjectorSpec, N: int) -> int:
    """Matmul and convolution FLOPs (2 per multiply-add) of one projector forward, batch 1."""
    M, D = spec.num_tokens, spec.width
    if spec.kind == "linear":
        return _dense(N, spec.d_in, spec.d_out)
    if spec.kind == "mlp":
        return _dense(N, spec.d_in, spec.d_out) + (spec.mlp_layers - 1) * _dense(N, spec.d_out, spec.d_out)
    readout = _dense(M, D, spec.d_out)
    if spec.kind == "resampler":
        block = _attention(M, N, D) + _dense(M, D, 4 * D) + _dense(M, 4 * D, D)
        return _dense(N, spec.d_in, D) + spec.depth * block + readout
    if spec.kind == "c_abstractor":
        stem = _dense(N, spec.d_in, D) if D != spec.d_in else 0
        return stem + spec.depth * (_c_block(spec, N) + _c_block(spec, M)) + readout
    # d_abstractor
    K = spec.num_offsets
    init = _dense(M, spec.d_in, D) if spec.pooled_queries else 0
    if not spec.manual_ref_points:
        init += _dense(M, D, 2)
    block = (_dense(M, D, 2 * K) + _dense(M, D, K) + _dense(N, spec.d_in, D)
             + _dense(M, D, 4 * D) + _dense(M, 4 * D, D))
    if spec.self_attn:
        block += _attention(M, M, D)
    return init + spec.depth * block + readout


def lm_forward_flops(cfg: LMConfig, T: int) -> int:
    D = cfg.dim
    block = _attention(T, T, D) + _dense(T, D, 4 * D) + _dense(T, 4 * D, D)
    return cfg.depth * block + _dense(T, D, cfg.vocab)


@dataclass
class StepProfile:
    M: int
    N: int
    text_len: int
    seq_len: int
    projector_flops: int
    lm_flops: int
    batch: int = 1
    times: list[float] = field(default_factory=list)

    @property
    def flops(self) -> int:
        return self.projector_flops + self.lm_flops

    @property
    def wall_time(self) -> float:
        return float(np.median(self.times)) if self.times else float("nan")


def step_flops(spec: ProjectorSpec, N: int, text_len: int, lm_cfg: LMConfig | None = None,
               image_indicator: bool = False, batch: int = 1) -> tuple[int, int, int]:
    """(projector, LM, sequence length) for one forward+backward step."""
    lm_cfg = lm_cfg or LMConfig()
    T = spec.num_tokens + (2 if image_indicator else 0) + text_len
    proj = BACKWARD_FACTOR * batch * projector_forward_flops(spec, N)
    lm = BACKWARD_FACTOR * batch * lm_forward_flops(lm_cfg, T)
    return proj, lm, T


def profile_step(spec: ProjectorSpec, N: int, M: int | None = None, text_len: int = 32,
                 lm_cfg: LMConfig | None = None, encoder_cfg: EncoderConfig | None = None,
                 reps: int = 5, batch: int = 4, warmup: int = 1, measure: bool = True,
                 seed: int = 0) -> StepProfile:
    """FLOPs and median wall time of one projector+LM forward/backward step.

    ``M`` overrides the spec's token count.  The frozen encoder is excluded
    from both the count and the timing since its features are fixed inputs.
    """
    if text_len < 2:
        raise ValueError("text_len must be at least 2 (one prompt position and one response token)")
    if reps < 5 and measure:
        raise ValueError("timing needs at least 5 repetitions")
    if M is not None:
        spec = ProjectorSpec.from_dict({**spec.to_dict(), "num_tokens": M})
    side = int(round(np.sqrt(N)))
    if side * side != N:
        raise ValueError(f"N={N} must be a square grid")
    enc = encoder_cfg or EncoderConfig(grid=(side, side), dim=spec.d_in)
    if enc.N != N:
        raise ValueError(f"encoder grid {enc.grid} does not give N={N}")
    lm_cfg = lm_cfg or LMConfig(dim=spec.d_out)
    proj, lm, T = step_flops(spec, N, text_len, lm_cfg, batch=1)
    prof = StepProfile(spec.num_tokens, N, text_len, T, proj, lm, batch=batch)
    if not measure:
        return prof
    model = assemble(spec, enc, lm_cfg, seed=seed)
    text = "x" * (text_len - 1)
    examples = [InstructionExample(f"profile-{i}", [(text[:-1], "y")]) for i in range(batch)]
    b = make_batch(examples)
    model.encoder(b.image_ids)  # fill the feature cache outside the timed region
    for r in range(warmup + reps):
        model.zero_grad()
        t0 = time.perf_counter()
        response_loss(model, b).backward()
        dt = time.perf_counter() - t0
        if r >= warmup:
            prof.times.append(dt)
    model.zero_grad()
    return prof
