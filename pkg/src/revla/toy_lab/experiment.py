"""End-to-end forgetting-and-recovery experiment on the toy network.

Phase 1 pretrains encoder plus head "a" on task A and snapshots the result.
Phase 2 fine-tunes encoder plus head "b" on task B, which damages the
features task A relies on. Phase 3 trains head "b" with the encoder frozen
while a merge plan steps the encoder back toward the phase-1 snapshot; each
stage merges the original (fine-tuned, pretrained) pair, so the trajectory
equals direct interpolation evaluated at every boundary alpha. Task-A probe
error is measured after each phase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..schedule import MergePlan, apply_stage, stage_boundaries
from ..tensor_store import Checkpoint, Selector, save_checkpoint, select
from .model import ENCODER_PATTERNS, ToyModel, forward
from .tasks import TASK_A_DEPTH, TASK_B_ACTION, STREAM_EVAL, TaskSpec, make_dataset, stream_rng
from .training import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_PROBE_COUNT,
    DEFAULT_RIDGE_LAMBDA,
    probe_linear,
    train,
)

STREAM_REVERSAL_TRAIN = 5

StageHook = Callable[[int, float, Checkpoint], None]


@dataclass(frozen=True)
class LabConfig:
    """Hyperparameters of the three-phase experiment.

    Sized so a full run takes seconds: the point is the mechanism, not the
    scale. All randomness is derived from ``seed``.
    """

    seed: int = 7
    pretrain_steps: int = 5000
    finetune_steps: int = 5000
    learning_rate: float = 1e-2
    batch_size: int = DEFAULT_BATCH_SIZE
    ridge_lambda: float = DEFAULT_RIDGE_LAMBDA
    probe_train_count: int = DEFAULT_PROBE_COUNT
    probe_heldout_count: int = DEFAULT_PROBE_COUNT
    eval_count: int = DEFAULT_PROBE_COUNT

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "pretrain_steps": self.pretrain_steps,
            "finetune_steps": self.finetune_steps,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "ridge_lambda": self.ridge_lambda,
            "probe_train_count": self.probe_train_count,
            "probe_heldout_count": self.probe_heldout_count,
            "eval_count": self.eval_count,
        }


@dataclass
class ExperimentReport:
    """Probe errors around the fine-tune/reversal cycle, plus diagnostics."""

    variant_name: str
    seed: int
    probe_err_pretrained: float
    probe_err_after_finetune: float
    probe_err_after_reversal: float
    taskB_final_err: float
    encoder_bitwise_reverted: bool
    stage_alphas: list[tuple[int, float]]
    loss_curves: dict[str, list[float]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def forgetting_ratio(self) -> float:
        return self.probe_err_after_finetune / self.probe_err_pretrained

    def to_dict(self) -> dict:
        return {
            "variant_name": self.variant_name,
            "seed": self.seed,
            "probe_err_pretrained": self.probe_err_pretrained,
            "probe_err_after_finetune": self.probe_err_after_finetune,
            "probe_err_after_reversal": self.probe_err_after_reversal,
            "forgetting_ratio": self.forgetting_ratio,
            "taskB_final_err": self.taskB_final_err,
            "encoder_bitwise_reverted": self.encoder_bitwise_reverted,
            "stage_alphas": [[step, alpha] for step, alpha in self.stage_alphas],
            "loss_curves": self.loss_curves,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _encoder_names(ckpt: Checkpoint) -> list[str]:
    return select(ckpt, Selector(ENCODER_PATTERNS))


def _encoders_equal(a: Checkpoint, b: Checkpoint) -> bool:
    names = _encoder_names(a)
    return all(a[n].tobytes() == b[n].tobytes() for n in names)


def run_reversal_experiment(
    plan: MergePlan,
    config: LabConfig = LabConfig(),
    on_stage: StageHook | None = None,
    checkpoint_dir: str | Path | None = None,
) -> ExperimentReport:
    """Run pretrain, fine-tune, and staged reversal; probe task A throughout.

    ``on_stage`` is called after each boundary merge with (step, alpha,
    full checkpoint). With ``checkpoint_dir`` set, the pretrained,
    fine-tuned, and final checkpoints are written there.
    """
    task_a = TaskSpec(TASK_A_DEPTH, config.seed)
    task_b = TaskSpec(TASK_B_ACTION, config.seed)
    probe_kwargs = dict(
        train_count=config.probe_train_count, heldout_count=config.probe_heldout_count
    )

    model = ToyModel.initialize(config.seed)
    model, pretrain_losses = train(
        model, task_a, config.pretrain_steps, config.learning_rate,
        batch_size=config.batch_size,
    )
    pretrained = model.to_checkpoint()
    probe_pre = probe_linear(model, task_a, config.ridge_lambda, **probe_kwargs)

    model, finetune_losses = train(
        model, task_b, config.finetune_steps, config.learning_rate,
        batch_size=config.batch_size,
    )
    finetuned = model.to_checkpoint()
    probe_ft = probe_linear(model, task_a, config.ridge_lambda, **probe_kwargs)

    boundaries = stage_boundaries(plan.schedule)
    encoder_freeze = Selector(ENCODER_PATTERNS)
    reversal_rng = stream_rng(task_b, STREAM_REVERSAL_TRAIN)
    reversal_losses: list[float] = []
    stage_length = plan.schedule.stage_length
    for step, alpha in boundaries:
        merged = apply_stage(finetuned, pretrained, plan, step)
        model.load_tensors(merged, select(merged, plan.selector))
        if on_stage is not None:
            on_stage(step, alpha, model.to_checkpoint())
        model, stage_losses = train(
            model, task_b, stage_length, config.learning_rate, encoder_freeze,
            batch_size=config.batch_size, rng=reversal_rng,
        )
        reversal_losses.extend(stage_losses)
    probe_rev = probe_linear(model, task_a, config.ridge_lambda, **probe_kwargs)

    final = model.to_checkpoint()
    x_eval, y_eval = make_dataset(task_b, STREAM_EVAL, config.eval_count)
    task_b_err = float(np.mean((forward(model, x_eval, task_b.head) - y_eval) ** 2))

    if checkpoint_dir is not None:
        out = Path(checkpoint_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(pretrained, out / f"{plan.variant_name}_pretrained.safetensors")
        save_checkpoint(finetuned, out / f"{plan.variant_name}_finetuned.safetensors")
        save_checkpoint(final, out / f"{plan.variant_name}_final.safetensors")

    return ExperimentReport(
        variant_name=plan.variant_name,
        seed=config.seed,
        probe_err_pretrained=probe_pre,
        probe_err_after_finetune=probe_ft,
        probe_err_after_reversal=probe_rev,
        taskB_final_err=task_b_err,
        encoder_bitwise_reverted=_encoders_equal(final, pretrained),
        stage_alphas=list(boundaries),
        loss_curves={
            "pretrain": pretrain_losses,
            "finetune": finetune_losses,
            "reversal": reversal_losses,
        },
        config=config.to_dict(),
    )


def render_comparison(reports: list[ExperimentReport]) -> str:
    """Aligned text table comparing variants' probe errors and reversion."""
    headers = (
        "variant", "probe_pretrained", "probe_finetuned", "probe_reversal",
        "forget_ratio", "taskB_err", "reverted",
    )
    rows = [headers]
    for rep in reports:
        rows.append((
            rep.variant_name,
            f"{rep.probe_err_pretrained:.6f}",
            f"{rep.probe_err_after_finetune:.6f}",
            f"{rep.probe_err_after_reversal:.6f}",
            f"{rep.forgetting_ratio:.2f}",
            f"{rep.taskB_final_err:.6f}",
            "yes" if rep.encoder_bitwise_reverted else "no",
        ))
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
