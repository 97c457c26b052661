"""Trainer contracts: loss assembly, schedules, determinism, finetuning."""

import dataclasses
import math

import numpy as np
import pytest
import torch

from mdllens.data import Batch, SyntheticDomainParams, make_synthetic_domain, mixed_batches
from mdllens.models import WidthConfig, build_model
from mdllens.training import (
    DivergenceError,
    JOINT_MILESTONE_FRACTIONS,
    SINGLE_MILESTONE_FRACTIONS,
    TrainConfig,
    TrainLog,
    TrainingError,
    default_milestones,
    evaluate,
    finetune,
    lr_at_epoch,
    step_losses,
    train_joint,
    train_single,
)
from mdllens.weighting import make_scheme


def small_domain(name="d", classes=4, train=8, test=8, shift=0, noise=0.08, task=0):
    dom = make_synthetic_domain(
        SyntheticDomainParams(classes, train, test, shift_seed=shift, noise_std=noise),
        name=name,
    )
    return dom.with_task_label(task)


class FixedWeights:
    """Test double: a scheme returning prescribed constant weights."""

    name = "fixed"

    def __init__(self, weights):
        self.weights = weights

    def torch_parameters(self):
        return []

    def compute(self, losses):
        return dict(self.weights), None


class TestMilestones:
    def test_paper_scale_single(self):
        assert default_milestones(250, SINGLE_MILESTONE_FRACTIONS) == (140, 210)

    def test_desk_scale(self):
        assert default_milestones(60, SINGLE_MILESTONE_FRACTIONS) == (34, 50)
        assert default_milestones(75, JOINT_MILESTONE_FRACTIONS) == (38, 62)

    def test_degenerate_budgets(self):
        assert default_milestones(0, SINGLE_MILESTONE_FRACTIONS) == ()
        assert default_milestones(1, SINGLE_MILESTONE_FRACTIONS) == ()

    def test_lr_values_exact(self):
        cfg = TrainConfig(lr=0.1, lr_decay=0.1, epochs=60)
        ms = (34, 50)
        for epoch in range(60):
            expected = 0.1 * 0.1 ** sum(1 for m in ms if m <= epoch)
            assert lr_at_epoch(cfg, ms, epoch) == expected
        assert lr_at_epoch(cfg, ms, 0) == 0.1
        assert lr_at_epoch(cfg, ms, 34) == 0.1 * 0.1
        assert lr_at_epoch(cfg, ms, 50) == 0.1 * 0.1**2

    def test_invalid_milestones_rejected(self):
        with pytest.raises(TrainingError):
            TrainConfig(epochs=10, lr_milestones=(5, 5)).validate()
        with pytest.raises(TrainingError):
            TrainConfig(epochs=10, lr_milestones=(12,)).validate()


def one_batch(domains, batch_size=64, seed=0):
    return next(mixed_batches(domains, batch_size, epoch_seed=seed))


class TestStepLosses:
    def setup_method(self):
        self.a = small_domain("a", task=0)
        self.b = small_domain("b", shift=2, task=1)
        self.model = build_model(WidthConfig(0.25), {0: 4, 1: 4}, seed=0)

    def test_single_task_batch_is_plain_mean_ce(self):
        batch = one_batch([self.a])
        scheme = make_scheme("uniform", [0])
        total, tlv = step_losses(self.model, batch, scheme)
        assert tlv.present_tasks == {0}
        assert float(total.detach()) == tlv.values[0]

    def test_weighted_sum_assembly(self):
        batch = one_batch([self.a, self.b])
        scheme = FixedWeights({0: 0.5, 1: 1.5})
        total, tlv = step_losses(self.model, batch, scheme)
        expected = 0.5 * tlv.values[0] + 1.5 * tlv.values[1]
        assert float(total.detach()) == pytest.approx(expected, rel=1e-6)
        # the worked example: weights {0.5, 1.5} on losses {2.0, 1.0}
        assert 0.5 * 2.0 + 1.5 * 1.0 == 2.5

    def test_lambda_doubling_doubles_total(self):
        batch = one_batch([self.a, self.b])
        t1, _ = step_losses(self.model, batch, FixedWeights({0: 0.7, 1: 1.2}))
        t2, _ = step_losses(self.model, batch, FixedWeights({0: 1.4, 1: 2.4}))
        assert float(t2.detach()) == 2 * float(t1.detach())

    def test_uncertainty_adds_regularizer(self):
        batch = one_batch([self.a, self.b])
        scheme = make_scheme("uncertainty", [0, 1])
        total, tlv = step_losses(self.model, batch, scheme)
        expected = tlv.values[0] + tlv.values[1] + 2 * math.log(2)
        assert float(total.detach()) == pytest.approx(expected, rel=1e-5)

    def test_unknown_task_rejected(self):
        batch = one_batch([small_domain("c", task=7)])
        with pytest.raises(TrainingError):
            step_losses(self.model, batch, make_scheme("uniform", [7]))

    def test_gradient_routing_absent_task(self):
        batch = one_batch([self.a])  # no task-1 samples
        total, _ = step_losses(self.model, batch, make_scheme("uniform", [0, 1]))
        total.backward()
        for p in self.model.heads["1"].parameters():
            assert p.grad is None or p.grad.abs().sum() == 0
        assert any(p.grad is not None for p in self.model.backbone.parameters())

    def test_backbone_gradient_matches_finite_differences(self):
        model = build_model(WidthConfig(0.25), {0: 4, 1: 4}, seed=1).double()
        dom_a = small_domain("a", train=4, task=0)
        dom_b = small_domain("b", train=4, shift=1, task=1)
        batch = one_batch([dom_a, dom_b], batch_size=32)
        batch = Batch(
            images=batch.images.astype(np.float64),
            labels=batch.labels,
            tasks=batch.tasks,
            sample_ids=batch.sample_ids,
        )
        scheme = FixedWeights({0: 1.0, 1: 1.0})
        total, _ = step_losses(model, batch, scheme)
        total.backward()
        p = model.backbone.stem_conv.weight
        grad = float(p.grad[0, 0, 0, 0])
        eps = 1e-6
        with torch.no_grad():
            p[0, 0, 0, 0] += eps
            hi, _ = step_losses(model, batch, scheme)
            p[0, 0, 0, 0] -= 2 * eps
            lo, _ = step_losses(model, batch, scheme)
            p[0, 0, 0, 0] += eps
        fd = (float(hi.detach()) - float(lo.detach())) / (2 * eps)
        assert grad == pytest.approx(fd, rel=1e-3)


class TestTrainSingle:
    def test_zero_epochs_returns_initialization(self):
        dom = small_domain()
        cfg = TrainConfig(epochs=0, seed=4)
        model, log = train_single(dom, WidthConfig(0.25), cfg)
        fresh = build_model(WidthConfig(0.25), {0: dom.num_classes}, seed=4)
        for p, q in zip(model.parameters(), fresh.parameters()):
            assert torch.equal(p, q)
        assert log.step_records == []

    def test_reproducible_loss_curves(self):
        dom = small_domain(train=16)
        cfg = TrainConfig(epochs=3, seed=2, batch_size=32)
        _, log1 = train_single(dom, WidthConfig(0.25), cfg)
        _, log2 = train_single(dom, WidthConfig(0.25), cfg)
        assert log1.loss_curve() == log2.loss_curve()
        assert [r["test_acc"] for r in log1.eval_records] == [
            r["test_acc"] for r in log2.eval_records
        ]

    def test_step_count_invariant(self):
        dom = small_domain(classes=3, train=10)  # 30 samples
        cfg = TrainConfig(epochs=4, seed=0, batch_size=8)
        _, log = train_single(dom, WidthConfig(0.25), cfg)
        steps = {r["step"] for r in log.step_records}
        assert len(steps) == 4 * math.ceil(30 / 8)

    def test_divergence_guard(self):
        dom = small_domain()
        cfg = dataclasses.replace(TrainConfig(epochs=1, seed=0), loss_guard=1e-9)
        with pytest.raises(DivergenceError):
            train_single(dom, WidthConfig(0.25), cfg)

    def test_log_roundtrip(self, tmp_path):
        dom = small_domain(train=8)
        cfg = TrainConfig(epochs=2, seed=1, batch_size=16)
        _, log = train_single(dom, WidthConfig(0.25), cfg)
        log.checkpoint_path = "somewhere.zip"
        path = tmp_path / "log.jsonl"
        log.save(path)
        back = TrainLog.load(path)
        assert back.step_records == log.step_records
        assert back.eval_records == log.eval_records
        assert back.checkpoint_path == "somewhere.zip"


class TestTrainJoint:
    def test_needs_two_domains(self):
        with pytest.raises(TrainingError):
            train_joint([small_domain()], WidthConfig(0.25), TrainConfig(epochs=1))

    def test_duplicate_task_labels_rejected(self):
        a, b = small_domain("a", task=0), small_domain("b", task=0)
        with pytest.raises(TrainingError):
            train_joint([a, b], WidthConfig(0.25), TrainConfig(epochs=1))

    def test_two_heads_and_uniform_lambdas(self):
        a = small_domain("a", task=0)
        b = small_domain("b", shift=1, task=1)
        cfg = TrainConfig(epochs=2, seed=0, batch_size=32, weighting="uniform")
        model, log = train_joint([a, b], WidthConfig(0.25), cfg)
        assert set(model.head_sizes) == {0, 1}
        assert all(r["lambda"] == 1.0 for r in log.step_records)

    def test_three_domains_supported(self):
        doms = [small_domain(f"d{i}", shift=i, task=i) for i in range(3)]
        cfg = TrainConfig(epochs=1, seed=0, batch_size=32)
        model, _ = train_joint(doms, WidthConfig(0.25), cfg)
        assert set(model.head_sizes) == {0, 1, 2}

    def test_cov_weights_sum_to_task_count(self):
        a = small_domain("a", train=32, task=0)
        b = small_domain("b", train=32, shift=1, task=1)
        cfg = TrainConfig(epochs=3, seed=0, batch_size=16, weighting="cov", cov_warmup_steps=4)
        _, log = train_joint([a, b], WidthConfig(0.25), cfg)
        by_step = {}
        for r in log.step_records:
            by_step.setdefault(r["step"], {})[r["task"]] = r["lambda"]
        late = [v for s, v in by_step.items() if s > 4 and len(v) == 2]
        assert late, "no post-warmup steps with both tasks present"
        for lambdas in late[-3:]:
            assert sum(lambdas.values()) == pytest.approx(2.0, abs=1e-5)


class TestFinetune:
    def test_zero_epochs_keeps_backbone(self):
        src = small_domain("src", task=0)
        tgt = small_domain("tgt", shift=3, task=1)
        pre, _ = train_single(src, WidthConfig(0.25), TrainConfig(epochs=1, seed=0, batch_size=16))
        ft, _ = finetune(pre, tgt, WidthConfig(0.25), TrainConfig(epochs=0, seed=1))
        for p, q in zip(ft.backbone.parameters(), pre.backbone.parameters()):
            assert torch.equal(p, q)
        assert set(ft.head_sizes) == {1}

    def test_source_head_retained_when_asked(self):
        src = small_domain("src", task=0)
        tgt = small_domain("tgt", shift=3, task=1)
        pre, _ = train_single(src, WidthConfig(0.25), TrainConfig(epochs=0, seed=0))
        ft, _ = finetune(
            pre, tgt, WidthConfig(0.25), TrainConfig(epochs=0, seed=1), source_head_dropped=False
        )
        assert set(ft.head_sizes) == {0, 1}
        for p, q in zip(ft.heads["0"].parameters(), pre.heads["0"].parameters()):
            assert torch.equal(p, q)

    def test_width_mismatch_rejected(self):
        src = small_domain("src")
        pre, _ = train_single(src, WidthConfig(0.25), TrainConfig(epochs=0, seed=0))
        with pytest.raises(TrainingError):
            finetune(pre, src, WidthConfig(0.5), TrainConfig(epochs=0))


class TestEvaluate:
    def test_prediction_log_covers_test_split(self):
        dom = small_domain(test=12)
        model = build_model(WidthConfig(0.25), {0: dom.num_classes}, seed=0)
        acc, log = evaluate(model, dom, "m")
        assert len(log.records) == len(dom.test)
        assert log.domain == dom.name
        assert 0.0 <= acc <= 100.0
        assert acc == log.accuracy

    def test_ties_break_to_lowest_class(self):
        dom = small_domain(test=6)
        model = build_model(WidthConfig(0.25), {0: dom.num_classes}, seed=0)
        with torch.no_grad():
            head = model.heads["0"]
            head.weight.zero_()
            head.bias.zero_()
        _, log = evaluate(model, dom, "m")
        assert all(pred == 0 for _, _, pred in log.records)
