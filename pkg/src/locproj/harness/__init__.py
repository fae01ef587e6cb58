"""Desk-scale two-stage pipeline: stub encoder, projector, tiny LM."""

from .corpus import caption_corpus, memorization_corpus, probe_from_examples, random_probe
from .encoder import EncoderConfig, StubVisionEncoder
from .lm import IMAGE_END, IMAGE_START, LMConfig, TinyLM, decode_text, encode_text
from .metrics import DEFAULT_BOUNDS, BenchScores, avg_n, default_bound
from .model import (AssemblyError, Batch, ProbeItem, ProbeResult, VisionLanguageModel, assemble,
                    evaluate_probe, load_model, loss_targets, make_batch, read_probe, response_loss,
                    response_nll, run_probe, save_model, sequence_logprobs)
from .profile import StepProfile, lm_forward_flops, profile_step, projector_forward_flops, step_flops
from .train import AdamW, StageConfig, TrainLog, clip_grad_norm, lr_at, run_stage

__all__ = [
    "AdamW", "AssemblyError", "Batch", "BenchScores", "DEFAULT_BOUNDS", "EncoderConfig",
    "IMAGE_END", "IMAGE_START", "LMConfig", "ProbeItem", "ProbeResult", "StageConfig",
    "StepProfile", "StubVisionEncoder", "TinyLM", "TrainLog", "VisionLanguageModel", "assemble",
    "avg_n", "caption_corpus", "clip_grad_norm", "decode_text", "default_bound", "encode_text",
    "evaluate_probe", "lm_forward_flops", "load_model", "loss_targets", "lr_at", "make_batch",
    "memorization_corpus", "probe_from_examples", "profile_step", "projector_forward_flops",
    "random_probe", "read_probe", "response_loss", "response_nll", "run_probe", "run_stage",
    "save_model", "sequence_logprobs", "step_flops",
]
