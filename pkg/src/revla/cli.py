"""Batch command line: inspect, merge, schedule, lab, and eval subcommands.

Every successful run writes a machine-readable artifact; every failure
prints a diagnostic and exits nonzero. There is no ambient randomness: the
lab takes an explicit --seed, so repeated runs produce bitwise-identical
artifacts. Verbosity is controlled by the REVLA_LOG_LEVEL environment
variable (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .merge import MergeSpec, linear_merge
from .ood_eval import (
    METRIC_LIFT,
    METRICS,
    EvalLogError,
    aggregate,
    parse_episode_log,
    partial_success_summary,
    relative_improvement,
    render_in_domain_table,
    render_ood_table,
    render_partial_success,
)
from .schedule import (
    MODE_GRADUAL,
    MODES,
    VARIANTS,
    Schedule,
    plan_for_variant,
    schedule_from_config,
    stage_boundaries,
)
from .tensor_store import (
    Selector,
    load_checkpoint,
    save_checkpoint,
    serialize_checkpoint,
)
from .toy_lab import LabConfig, render_comparison, run_reversal_experiment

logger = logging.getLogger("revla")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

DEFAULT_LAB_TOTAL_STEPS = 5000
DEFAULT_LAB_STAGE_LENGTH = 500

_LAB_CONFIG_KEYS = {
    "variant", "seed", "pretrain_steps", "finetune_steps", "total_steps", "stage_length",
}


def _configure_logging() -> None:
    level = os.environ.get("REVLA_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(message)s")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _selector_from_args(args: argparse.Namespace, default_all: bool = False) -> Selector:
    patterns = args.select or ([] if not default_all else ["*"])
    return Selector(patterns)


def cmd_inspect(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    rows = []
    for meta in ckpt.metas():
        digest = hashlib.sha256(ckpt[meta.name].tobytes()).hexdigest()
        rows.append({
            "name": meta.name,
            "dtype": "f32" if meta.dtype.itemsize == 4 else "f64",
            "shape": list(meta.shape),
            "byte_range": list(meta.byte_range),
            "sha256": digest,
        })
        print(f"{meta.name}  {rows[-1]['dtype']}  {rows[-1]['shape']}  {digest[:16]}")
    file_digest = hashlib.sha256(serialize_checkpoint(ckpt)).hexdigest()
    print(f"tensors: {len(rows)}  canonical sha256: {file_digest[:16]}")
    payload = {
        "file": str(args.checkpoint),
        "tensor_count": len(rows),
        "tensors": rows,
        "canonical_sha256": file_digest,
        "metadata": ckpt.metadata,
    }
    _write_json(Path(args.out), payload)
    return 0


def cmd_merge(args: argparse.Namespace) -> int:
    current = load_checkpoint(args.current)
    pretrained = load_checkpoint(args.pretrained)
    spec = MergeSpec(args.alpha, _selector_from_args(args, default_all=True))
    merged = linear_merge(current, pretrained, spec)
    save_checkpoint(merged, args.out)
    selected = [n for n in merged.names() if spec.selector.matches(n)]
    logger.info("merged %d of %d tensors at alpha=%s", len(selected), len(merged), args.alpha)
    print(f"wrote {args.out}: {len(selected)} tensors merged at alpha={args.alpha}")
    return 0


def _schedule_from_args(args: argparse.Namespace) -> tuple[Schedule, Selector]:
    patterns = list(args.select or [])
    if args.config:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not patterns:
            patterns = list(config.get("selector", []))
        return schedule_from_config(config), Selector(patterns)
    if args.total_steps is None:
        raise ValueError("either --config or --total-steps is required")
    return Schedule(args.mode, args.total_steps, args.stage_length), Selector(patterns)


def cmd_schedule(args: argparse.Namespace) -> int:
    schedule, selector = _schedule_from_args(args)
    boundaries = stage_boundaries(schedule)
    groups = ", ".join(selector.patterns) if selector.patterns else "-"
    print(f"{'step':>8}  {'alpha':>6}  groups")
    for step, alpha in boundaries:
        print(f"{step:>8}  {alpha:>6.3f}  {groups}")
    payload = {
        "mode": schedule.mode,
        "total_steps": schedule.total_steps,
        "stage_length": schedule.stage_length,
        "stage_count": schedule.stage_count,
        "boundaries": [[step, alpha] for step, alpha in boundaries],
        "selector": list(selector.patterns),
    }
    _write_json(Path(args.out), payload)
    return 0


def cmd_lab(args: argparse.Namespace) -> int:
    # explicit flags win over the config file, which wins over defaults
    file_config = {}
    if args.config:
        file_config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(file_config) - _LAB_CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown lab config keys: {sorted(unknown)}")

    def setting(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_config.get(key, default)

    variant = setting(args.variant, "variant", "all")
    variants = list(VARIANTS) if variant == "all" else [variant]
    config = LabConfig(
        seed=setting(args.seed, "seed", 7),
        pretrain_steps=setting(args.pretrain_steps, "pretrain_steps", 5000),
        finetune_steps=setting(args.finetune_steps, "finetune_steps", 5000),
    )
    total_steps = setting(args.total_steps, "total_steps", DEFAULT_LAB_TOTAL_STEPS)
    stage_length = setting(args.stage_length, "stage_length", DEFAULT_LAB_STAGE_LENGTH)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for variant in variants:
        plan = plan_for_variant(variant, total_steps, stage_length)
        logger.info("running variant %s", variant)
        report = run_reversal_experiment(
            plan, config, checkpoint_dir=out_dir if args.save_checkpoints else None
        )
        (out_dir / f"report_{variant}.json").write_text(report.to_json(), encoding="utf-8")
        reports.append(report)
    comparison = render_comparison(reports)
    (out_dir / "comparison.txt").write_text(comparison, encoding="utf-8")
    print(comparison, end="")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    records = []
    for log_path in args.logs:
        records.extend(parse_episode_log(log_path))
    if not records:
        raise EvalLogError("no records")
    table = aggregate(records, args.metric)
    summary = partial_success_summary(records)

    ood_text = render_ood_table(table)
    print(ood_text, end="")
    in_domain_text = render_in_domain_table(table)
    if in_domain_text:
        print()
        print(in_domain_text, end="")
    print()
    print(render_partial_success(summary), end="")

    payload = {
        "metric": args.metric,
        "table": table.to_dict(),
        "partial_success": {
            policy: {"grasp": grasp, "lift": lift} for policy, (grasp, lift) in summary.items()
        },
    }
    if args.baseline:
        if args.baseline not in summary:
            raise EvalLogError(f"baseline policy {args.baseline!r} not present in the logs")
        base_grasp, base_lift = summary[args.baseline]
        improvements = {}
        for policy, (grasp, lift) in summary.items():
            if policy == args.baseline:
                continue
            improvements[policy] = {
                "grasp_pct": relative_improvement(grasp, base_grasp),
                "lift_pct": relative_improvement(lift, base_lift),
            }
        payload["improvement_over_baseline"] = {"baseline": args.baseline, "policies": improvements}
        print()
        print(f"improvement over {args.baseline}:")
        for policy, imp in improvements.items():
            print(f"  {policy}: grasp {imp['grasp_pct']:+d}%  lift {imp['lift_pct']:+d}%")
    _write_json(Path(args.out), payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revla",
        description="Checkpoint merging, reversal schedules, the forgetting lab, and episode-log scoring.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_inspect = sub.add_parser("inspect", help="list a checkpoint's tensors and checksums")
    p_inspect.add_argument("checkpoint")
    p_inspect.add_argument("--out", default="inspect.json", help="JSON inventory path")
    p_inspect.set_defaults(func=cmd_inspect)

    p_merge = sub.add_parser("merge", help="linearly interpolate two checkpoints")
    p_merge.add_argument("current")
    p_merge.add_argument("pretrained")
    p_merge.add_argument("--alpha", type=float, required=True, help="pretrained mixing weight in [0, 1]")
    p_merge.add_argument("--select", action="append", help="tensor name pattern (repeatable; default '*')")
    p_merge.add_argument("--out", required=True, help="merged checkpoint path")
    p_merge.set_defaults(func=cmd_merge)

    p_sched = sub.add_parser("schedule", help="print the stage boundary table of a curriculum")
    p_sched.add_argument("--mode", choices=MODES, default=MODE_GRADUAL)
    p_sched.add_argument("--total-steps", type=int)
    p_sched.add_argument("--stage-length", type=int)
    p_sched.add_argument("--select", action="append", help="parameter group pattern (repeatable)")
    p_sched.add_argument("--config", help="JSON schedule config (overrides flags)")
    p_sched.add_argument("--out", default="schedule.json", help="JSON boundary table path")
    p_sched.set_defaults(func=cmd_schedule)

    p_lab = sub.add_parser("lab", help="run the forgetting-and-reversal experiment")
    p_lab.add_argument("--variant", choices=VARIANTS + ("all",))
    p_lab.add_argument("--seed", type=int)
    p_lab.add_argument("--total-steps", type=int, help="reversal-phase steps")
    p_lab.add_argument("--stage-length", type=int)
    p_lab.add_argument("--pretrain-steps", type=int)
    p_lab.add_argument("--finetune-steps", type=int)
    p_lab.add_argument("--config", help="JSON experiment config; explicit flags override it")
    p_lab.add_argument("--save-checkpoints", action="store_true",
                       help="also write pretrained/fine-tuned/final checkpoints")
    p_lab.add_argument("--out", default="lab_reports", help="report directory")
    p_lab.set_defaults(func=cmd_lab)

    p_eval = sub.add_parser("eval", help="aggregate episode logs into success tables")
    p_eval.add_argument("logs", nargs="+", help="newline-delimited JSON episode logs")
    p_eval.add_argument("--metric", choices=METRICS, default=METRIC_LIFT)
    p_eval.add_argument("--baseline", help="policy to compute relative improvements against")
    p_eval.add_argument("--out", default="eval_report.json", help="JSON report path")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
