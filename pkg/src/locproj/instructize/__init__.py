from .core import (INVERSION, InstructionExample, RawRecord, check_bbox, format_slot, image_rng,
                   instructize, instructize_record, invert, merge_multiturn, normalize_target,
                   read_examples, read_records, render, select_template, write_jsonl)
from .templates import (BUILTIN_ROWS, COARSE_ROWS, DATASET_TASK, DEFAULT_TARGET, TASKS, Template,
                        TemplateError, TemplateRegistry, builtin_registry)

__all__ = [
    "BUILTIN_ROWS", "COARSE_ROWS", "DATASET_TASK", "DEFAULT_TARGET", "INVERSION",
    "InstructionExample", "RawRecord", "TASKS", "Template", "TemplateError", "TemplateRegistry",
    "builtin_registry", "check_bbox", "format_slot", "image_rng", "instructize",
    "instructize_record", "invert", "merge_multiturn", "normalize_target", "read_examples",
    "read_records", "render", "select_template", "write_jsonl",
]
