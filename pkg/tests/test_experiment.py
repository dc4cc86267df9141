"""The three-phase forgetting-and-reversal experiment."""

from __future__ import annotations

import pytest

from revla.merge import MergeSpec, linear_merge
from revla.schedule import plan_for_variant
from revla.tensor_store import load_checkpoint, select
from revla.toy_lab import LabConfig, run_reversal_experiment

# deliberately small so each case runs in well under a second; the
# full-scale configuration is exercised by the acceptance suite
FAST = LabConfig(seed=3, pretrain_steps=600, finetune_steps=600)
VARIANT_PLANS = {
    "D_flip": ("D_flip", 300, None),
    "DS_flip": ("DS_flip", 300, None),
    "D_gradual": ("D_gradual", 300, 100),
    "DS_gradual": ("DS_gradual", 300, 100),
}


@pytest.fixture(scope="module")
def gradual_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpts")
    stages = []
    plan = plan_for_variant("DS_gradual", 300, 100)
    report = run_reversal_experiment(
        plan, FAST,
        on_stage=lambda step, alpha, ckpt: stages.append((step, alpha, ckpt)),
        checkpoint_dir=out,
    )
    return plan, report, stages, out


def test_flip_restores_encoder_from_step_zero():
    stages = []
    plan = plan_for_variant("DS_flip", 300)
    report = run_reversal_experiment(
        plan, FAST, on_stage=lambda step, alpha, ckpt: stages.append((step, alpha, ckpt))
    )
    assert report.encoder_bitwise_reverted
    assert stages[0][:2] == (0, 1.0)
    assert report.probe_err_after_reversal == report.probe_err_pretrained


def test_gradual_terminal_identity(gradual_run):
    _, report, _, _ = gradual_run
    assert report.encoder_bitwise_reverted
    assert report.probe_err_after_reversal == report.probe_err_pretrained


def test_forgetting_shows_in_probe_ordering(gradual_run):
    _, report, _, _ = gradual_run
    assert report.probe_err_after_finetune > report.probe_err_pretrained
    assert report.probe_err_pretrained > 0


def test_stage_states_equal_direct_interpolation(gradual_run):
    # the experiment's staged encoder must match evaluating the blend
    # formula directly on the (fine-tuned, pretrained) pair at each alpha
    plan, _, stages, out = gradual_run
    pretrained = load_checkpoint(out / "DS_gradual_pretrained.safetensors")
    finetuned = load_checkpoint(out / "DS_gradual_finetuned.safetensors")
    assert [(s, a) for s, a, _ in stages] == [(0, 1 / 3), (100, 2 / 3), (200, 1.0)]
    for _, alpha, staged in stages:
        direct = linear_merge(finetuned, pretrained, MergeSpec(alpha, plan.selector))
        for name in select(direct, plan.selector):
            assert staged[name].tobytes() == direct[name].tobytes()


def test_final_checkpoint_encoder_equals_pretrained(gradual_run):
    _, _, _, out = gradual_run
    pretrained = load_checkpoint(out / "DS_gradual_pretrained.safetensors")
    final = load_checkpoint(out / "DS_gradual_final.safetensors")
    encoder = [n for n in final.names() if n.startswith("vision.")]
    assert encoder
    for name in encoder:
        assert final[name].tobytes() == pretrained[name].tobytes()
    assert final["head_b.weight"].tobytes() != pretrained["head_b.weight"].tobytes()


@pytest.mark.parametrize("variant", sorted(VARIANT_PLANS))
def test_all_variants_revert_bitwise(variant):
    name, total, stage = VARIANT_PLANS[variant]
    report = run_reversal_experiment(plan_for_variant(name, total, stage), FAST)
    assert report.encoder_bitwise_reverted
    assert report.probe_err_after_reversal == report.probe_err_pretrained


def test_report_fields_and_loss_curve_lengths(gradual_run):
    _, report, _, _ = gradual_run
    assert report.variant_name == "DS_gradual"
    assert report.seed == FAST.seed
    for value in (
        report.probe_err_pretrained,
        report.probe_err_after_finetune,
        report.probe_err_after_reversal,
        report.taskB_final_err,
    ):
        assert value >= 0
    assert len(report.loss_curves["pretrain"]) == FAST.pretrain_steps
    assert len(report.loss_curves["finetune"]) == FAST.finetune_steps
    assert len(report.loss_curves["reversal"]) == 300
    assert report.stage_alphas == [(0, 1 / 3), (100, 2 / 3), (200, 1.0)]


def test_experiment_is_bitwise_deterministic():
    plan = plan_for_variant("D_flip", 300)
    first = run_reversal_experiment(plan, FAST)
    second = run_reversal_experiment(plan, FAST)
    assert first.to_json() == second.to_json()


def test_report_json_shape(gradual_run):
    _, report, _, _ = gradual_run
    payload = report.to_dict()
    assert payload["encoder_bitwise_reverted"] is True
    assert payload["forgetting_ratio"] == pytest.approx(report.forgetting_ratio)
    assert payload["config"]["seed"] == FAST.seed
