"""Command-line entry points: ``instructize``, ``mixer`` and ``harness``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path


def _write_table(rows: list[dict], out) -> None:
    w = csv.DictWriter(out, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


# -- instructize ------------------------------------------------------------

def instructize_main(argv=None) -> int:
    from .instructize import TemplateRegistry, builtin_registry, instructize, read_records, write_jsonl

    ap = argparse.ArgumentParser(prog="instructize", description="Render raw task records as instruction examples.")
    ap.add_argument("--in", dest="inp", required=True, help="JSONL of raw records")
    ap.add_argument("--out", required=True, help="JSONL of instruction examples")
    ap.add_argument("--granularity", choices=["fine", "coarse"], default="fine")
    ap.add_argument("--diversity", choices=["single", "multi", "multi_flip"], default="single")
    ap.add_argument("--multi-turn", action="store_true")
    ap.add_argument("--dedup", action=argparse.BooleanOptionalAction, default=True)
    ap.add_argument("--max-turns", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--templates", help="JSON template file added to the built-in registry")
    ap.add_argument("--no-builtin", action="store_true", help="use only the --templates file")
    args = ap.parse_args(argv)

    base = None if args.no_builtin else builtin_registry()
    if args.templates:
        registry = TemplateRegistry.load(args.templates, base)
    elif base is None:
        ap.error("--no-builtin needs --templates")
    else:
        registry = base
    records = read_records(args.inp)
    examples = instructize(records, registry, args.granularity, args.diversity, args.multi_turn,
                           args.dedup, args.max_turns, args.seed)
    n = write_jsonl(args.out, examples)
    print(f"wrote {n} examples from {len(records)} records to {args.out}", file=sys.stderr)
    return 0


# -- mixer ------------------------------------------------------------------

def mixer_main(argv=None) -> int:
    from .mixer import MixtureSpec, resolve, sample

    ap = argparse.ArgumentParser(prog="mixer", description="Resolve and sample dataset mixtures.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("resolve", help="write the probability table as CSV")
    r.add_argument("--spec", required=True)
    r.add_argument("--out", help="CSV path (stdout when omitted)")
    s = sub.add_parser("stream", help="print n sampled dataset names, one per line")
    s.add_argument("--spec", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, required=True)
    args = ap.parse_args(argv)

    table = resolve(MixtureSpec.load(args.spec))
    if args.cmd == "resolve":
        if args.out:
            table.write_csv(args.out)
        else:
            _write_table([{"dataset": k, "probability": repr(v)} for k, v in table.probs.items()],
                         sys.stdout)
        return 0
    sys.stdout.write("".join(name + "\n" for name in sample(table, args.seed, args.n)))
    return 0


# -- harness ----------------------------------------------------------------

def _load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _train(args, stage: str) -> int:
    from .harness import StageConfig, assemble, load_model, run_stage, save_model
    from .instructize import read_examples
    from .mixer import MixtureSpec, resolve

    cfg = _load_json(args.config)
    stage_cfg = StageConfig.from_dict({**cfg.get("stage", {}), "stage": stage})
    init = args.init or cfg.get("init")
    if init:
        model = load_model(init)
    else:
        m = cfg.get("model", {})
        if "projector" not in m:
            raise SystemExit("config needs model.projector (or an --init checkpoint)")
        model = assemble(m["projector"], m.get("encoder"), m.get("lm"), m.get("image_indicator", False),
                         seed=args.seed)
    mixture = resolve(MixtureSpec.load(args.mixture)) if args.mixture else None
    corpus = read_examples(args.data)
    log = run_stage(model, stage_cfg, mixture, corpus, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.write_csv(out / "log.csv")
    save_model(out / "model.lpckpt", model, {"stage": stage_cfg.to_dict(), "seed": args.seed})
    print(f"{stage}: {stage_cfg.total_steps} steps, final loss {log.losses[-1]:.6f}, "
          f"{log.seconds:.1f}s -> {out}", file=sys.stderr)
    return 0


def _profile(args) -> int:
    from .harness import LMConfig, profile_step
    from .projectors import ProjectorSpec

    spec_d = _load_json(args.spec)
    lm = LMConfig.from_dict(spec_d.pop("lm")) if "lm" in spec_d else None
    spec = ProjectorSpec.from_dict(spec_d)
    rows = []
    for M in args.M or [spec.num_tokens]:
        p = profile_step(spec, args.N, M, args.text_len, lm_cfg=lm, reps=args.reps,
                         batch=args.batch, measure=not args.no_time)
        rows.append({"M": M, "seq_len": p.seq_len, "projector_flops": p.projector_flops,
                     "lm_flops": p.lm_flops, "flops": p.flops, "median_s": repr(p.wall_time)})
    _write_table(rows, sys.stdout)
    return 0


def _avgn(args) -> int:
    from .harness import BenchScores, avg_n

    print(f"{avg_n(BenchScores.from_json(args.scores)):.4f}")
    return 0


def _probe(args) -> int:
    from .harness import load_model, read_probe, run_probe

    res = run_probe(load_model(args.ckpt), read_probe(args.set), args.batch)
    print(json.dumps({"accuracy": res.accuracy, "items": len(res.correct)}))
    return 0


def harness_main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="harness", description="Two-stage toy pipeline, profiling and metrics.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("pretrain", "finetune"):
        t = sub.add_parser(name)
        t.add_argument("--config", required=True, help="JSON with 'stage' and 'model' sections")
        t.add_argument("--mixture", help="MixtureSpec JSON (uniform over datasets when omitted)")
        t.add_argument("--data", required=True, help="JSONL of instruction examples")
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--out", required=True, help="output directory for log.csv and model.lpckpt")
        t.add_argument("--init", help="checkpoint to start from")
    p = sub.add_parser("profile")
    p.add_argument("--spec", required=True, help="projector spec JSON (optional 'lm' section)")
    p.add_argument("--M", type=int, nargs="+")
    p.add_argument("--N", type=int, default=256)
    p.add_argument("--text-len", type=int, default=32)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--no-time", action="store_true", help="report FLOPs only")
    a = sub.add_parser("avgn")
    a.add_argument("--scores", required=True)
    q = sub.add_parser("probe")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--set", required=True, help="JSONL of probe items")
    q.add_argument("--batch", type=int, default=64)
    args = ap.parse_args(argv)

    if args.cmd == "pretrain":
        return _train(args, "pretrain")
    if args.cmd == "finetune":
        return _train(args, "instruction_tune")
    return {"profile": _profile, "avgn": _avgn, "probe": _probe}[args.cmd](args)
