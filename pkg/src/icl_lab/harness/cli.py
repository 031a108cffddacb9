"""Command-line interface: train, eval, flops, sweep."""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from icl_lab.flops import flops_report
from icl_lab.harness.config import (
    PRESETS,
    ConfigError,
    living_presets_doc,
    load_config,
    resolve_config,
)
from icl_lab.harness.runner import evaluate_checkpoint, run_experiment, sweep
from icl_lab.models import ArchitectureId, ModelConfig


def _parse_set_overrides(pairs: Optional[List[str]]) -> dict:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def _load(args) -> "ExperimentConfig":
    overrides = _parse_set_overrides(getattr(args, "set", None))
    if args.config:
        with open(args.config) as fh:
            flat = json.load(fh)
        if not isinstance(flat, dict):
            raise ConfigError(f"{args.config}: expected a JSON object of dotted keys")
    else:
        flat = {}
    flat.update(overrides)
    if getattr(args, "seed", None) is not None:
        flat["train.seed"] = args.seed
    return resolve_config(flat, preset=getattr(args, "preset", None))


def _cmd_train(args) -> int:
    config = _load(args)
    result = run_experiment(
        config,
        out_dir=args.out,
        dry_run=args.dry_run,
        resume=args.resume,
        reuse_existing=args.reuse,
        quiet=args.quiet,
    )
    if result.status == "dry-run":
        print(json.dumps(config.to_flat(), indent=2, sort_keys=True))
        with open(f"{result.out_dir}/flops.json") as fh:
            print(fh.read().rstrip())
        print(f"dry-run written to {result.out_dir}")
        return 0
    print(f"status: {result.status}")
    print(f"artifacts: {result.out_dir}")
    if result.final_eval is not None:
        print(f"eval overall: {result.final_eval.overall:.6g}")
        for key, value in result.final_eval.task_metric.items():
            print(f"eval {key}: {value:.6g}")
    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
    return 0 if result.status in ("completed", "reused") else 1


def _cmd_eval(args) -> int:
    config = _load(args)
    report = evaluate_checkpoint(
        args.checkpoint, config, n_prompts=args.n_prompts, seed=args.eval_seed
    )
    if args.out:
        report.to_json(args.out)
        print(f"report written to {args.out}")
    print(f"overall: {report.overall:.6g}")
    for key, value in report.task_metric.items():
        print(f"{key}: {value:.6g}")
    return 0


def _cmd_flops(args) -> int:
    cfg = ModelConfig(
        n_layers=args.layers,
        embed_dim=args.dim,
        n_heads=args.heads,
        state_dim=args.state_dim,
        max_seq_len=max(args.seq_len, 1),
    )
    report = flops_report(
        ArchitectureId(args.arch), cfg, L=args.seq_len,
        batch_size=args.batch, iterations=args.iters,
    )
    print(f"{'block kind':>12}  {'blocks':>6}  {'mults/block':>14}  {'mults total':>14}")
    for kind, entry in report["per_block_kind"].items():
        total = entry["blocks"] * entry["mults_per_block"]
        print(f"{kind:>12}  {entry['blocks']:>6}  {entry['mults_per_block']:>14}  {total:>14}")
    print(f"multiplications per pass: {report['mults_per_pass']}")
    flops = report["training_flops"]
    print(
        f"training FLOPs (x6 multiply-accumulate, batch {args.batch}, "
        f"{args.iters} iterations): {flops} (~{flops:.3e})"
    )
    return 0


def _cmd_sweep(args) -> int:
    config = _load(args)
    values = None
    if args.values:
        values = [json.loads(v) for v in args.values]
    result = sweep(
        config,
        axis=args.axis,
        values=values,
        out_dir=args.out,
        reuse_existing=args.reuse,
        quiet=args.quiet,
    )
    print(result.table())
    return 0 if any(r["status"] in ("completed", "reused") for r in result.runs) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icl-lab",
        description="Train and evaluate sequence models on synthetic "
        "in-context-learning tasks.",
        epilog=living_presets_doc(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        p.add_argument("--config", help="JSON config file with dotted keys",
                       required=False)
        p.add_argument("--preset", choices=sorted(PRESETS), help="named preset")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a dotted config key (repeatable)")
        p.add_argument("--seed", type=int, help="training seed override")

    p_train = sub.add_parser("train", help="run one training experiment")
    add_common(p_train)
    p_train.add_argument("--out", help="output directory (default derived)")
    p_train.add_argument("--dry-run", action="store_true",
                         help="echo config and FLOPs estimate; no training")
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the run directory's checkpoint")
    p_train.add_argument("--reuse", action="store_true",
                         help="return an existing completed matching run")
    p_train.add_argument("--quiet", action="store_true", default=False)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a task")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--n-prompts", type=int, default=None)
    p_eval.add_argument("--eval-seed", type=int, default=None)
    p_eval.add_argument("--out", help="write the JSON report here")
    p_eval.set_defaults(func=_cmd_eval)

    p_flops = sub.add_parser("flops", help="print the cost-model breakdown")
    p_flops.add_argument("--arch", required=True,
                         choices=[a.value for a in ArchitectureId])
    p_flops.add_argument("--layers", type=int, required=True)
    p_flops.add_argument("--dim", type=int, required=True)
    p_flops.add_argument("--seq-len", type=int, required=True)
    p_flops.add_argument("--heads", type=int, default=8)
    p_flops.add_argument("--state-dim", type=int, default=16)
    p_flops.add_argument("--batch", type=int, default=64)
    p_flops.add_argument("--iters", type=int, default=1)
    p_flops.set_defaults(func=_cmd_flops)

    p_sweep = sub.add_parser("sweep", help="sweep one axis and report the best run")
    add_common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=["lr", "architecture", "size"])
    p_sweep.add_argument("--values", nargs="*",
                         help="explicit axis values (JSON literals)")
    p_sweep.add_argument("--out", help="sweep root directory")
    p_sweep.add_argument("--reuse", action="store_true")
    p_sweep.add_argument("--quiet", action="store_true", default=False)
    p_sweep.set_defaults(func=_cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
