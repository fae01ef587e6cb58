"""Visual projectors mapping N region features to M visual tokens."""

from __future__ import annotations

import numpy as np

from .base import (AttentionTrace, FeatureMap, InflexibleProjectorError, Projector,
                   ProjectorConfigError, ProjectorSpec, VisualTokens, is_square)
from .c_abstractor import BottleneckBlock, CAbstractor, ConvNextBlock, StandardConvBlock
from .d_abstractor import DAbstractor, DeformableBlock, grid_reference_points
from .io import export_attention_trace, load_checkpoint, read_pgm, save_checkpoint
from .linear import LinearProjector, MLPProjector
from .resampler import Resampler

_FAMILIES = {
    "linear": LinearProjector,
    "mlp": MLPProjector,
    "resampler": Resampler,
    "c_abstractor": CAbstractor,
    "d_abstractor": DAbstractor,
}


def build_projector(spec: ProjectorSpec, seed: int | np.random.Generator = 0, **kwargs) -> Projector:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _FAMILIES[spec.kind](spec, rng, **kwargs)


def linear_project(proj: LinearProjector, fm: FeatureMap) -> VisualTokens:
    return proj(fm)


def mlp_project(proj: MLPProjector, fm: FeatureMap) -> VisualTokens:
    return proj(fm)


def resampler_project(proj: Resampler, fm: FeatureMap) -> tuple[VisualTokens, AttentionTrace]:
    return proj.forward_with_trace(fm)


def c_abstractor_project(proj: CAbstractor, fm: FeatureMap) -> VisualTokens:
    return proj(fm)


def d_abstractor_project(proj: DAbstractor, fm: FeatureMap) -> tuple[VisualTokens, AttentionTrace]:
    return proj.forward_with_trace(fm)


def save_projector(path, proj: Projector) -> None:
    save_checkpoint(path, proj.state_dict(), {"projector": proj.spec.to_dict()})


def load_projector(path) -> Projector:
    header, state = load_checkpoint(path)
    proj = build_projector(ProjectorSpec.from_dict(header["projector"]))
    proj.load_state_dict(state)
    return proj


__all__ = [
    "AttentionTrace", "BottleneckBlock", "CAbstractor", "ConvNextBlock", "DAbstractor",
    "DeformableBlock", "FeatureMap", "InflexibleProjectorError", "LinearProjector",
    "MLPProjector", "Projector", "ProjectorConfigError", "ProjectorSpec", "Resampler",
    "StandardConvBlock", "VisualTokens", "build_projector", "c_abstractor_project",
    "d_abstractor_project", "export_attention_trace", "grid_reference_points", "is_square",
    "linear_project", "load_checkpoint", "load_projector", "mlp_project", "read_pgm",
    "resampler_project", "save_checkpoint", "save_projector",
]
