"""Training loops: single-domain baselines, joint multi-domain runs, and
pretrain-then-finetune transfer runs.

All runs use SGD with momentum and weight decay and a multi-step LR schedule.
Joint runs draw mixed batches over the union of the domains' train sets and
combine per-task cross-entropies through a pluggable weighting scheme; each
sample's loss flows only through its own task's head plus the shared
backbone. Everything is a pure function of (config, seed): batch order, model
init, and therefore the logged loss curves.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import Batch, Domain, mixed_batches
from .metrics import PredictionLog
from .models import MDLModel, WidthConfig, build_model, images_to_tensor
from .weighting import TaskLossVector, WeightingScheme, make_scheme

__all__ = [
    "TrainConfig",
    "TrainLog",
    "TrainingError",
    "DivergenceError",
    "SINGLE_MILESTONE_FRACTIONS",
    "JOINT_MILESTONE_FRACTIONS",
    "default_milestones",
    "lr_at_epoch",
    "step_losses",
    "train_single",
    "train_joint",
    "finetune",
    "evaluate",
]

# LR drop points as fractions of the epoch budget (two drops per run).
SINGLE_MILESTONE_FRACTIONS = (0.56, 0.84)
JOINT_MILESTONE_FRACTIONS = (0.50, 0.83)


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 60
    lr_milestones: tuple[int, ...] | None = None  # None: derived from fractions
    lr_decay: float = 0.1
    seed: int = 0
    weighting: str = "uniform"
    cov_warmup_steps: int = 50
    threads: int = 1
    loss_guard: float = 100.0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise TrainingError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr_milestones is not None:
            ms = self.lr_milestones
            if any(m2 <= m1 for m1, m2 in zip(ms, ms[1:])) or any(
                m >= self.epochs for m in ms
            ):
                raise TrainingError(
                    f"lr_milestones must be strictly increasing and < epochs, got {ms}"
                )


def default_milestones(epochs: int, fractions: Sequence[float]) -> tuple[int, ...]:
    """Scale milestone fractions to an epoch budget (round half up, deduped)."""
    out: list[int] = []
    for f in fractions:
        m = int(math.floor(f * epochs + 0.5))
        if 0 < m < epochs and (not out or m > out[-1]):
            out.append(m)
    return tuple(out)


def lr_at_epoch(cfg: TrainConfig, milestones: tuple[int, ...], epoch: int) -> float:
    passed = sum(1 for m in milestones if m <= epoch)
    return cfg.lr * cfg.lr_decay**passed


@dataclass
class TrainLog:
    """Per-step loss/weight records plus per-epoch test accuracies."""

    step_records: list[dict] = field(default_factory=list)
    eval_records: list[dict] = field(default_factory=list)
    wall_clock_sec: float = 0.0
    checkpoint_path: str | None = None

    def loss_curve(self, task: int | None = None) -> list[float]:
        return [
            r["loss"]
            for r in self.step_records
            if task is None or r["task"] == task
        ]

    def final_accuracy(self, domain: str) -> float | None:
        accs = [r["test_acc"] for r in self.eval_records if r["domain"] == domain]
        return accs[-1] if accs else None

    def save(self, path: str | os.PathLike) -> None:
        tmp = f"{os.fspath(path)}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for rec in self.step_records:
                fh.write(json.dumps(rec) + "\n")
            for rec in self.eval_records:
                fh.write(json.dumps(rec) + "\n")
            fh.write(json.dumps({"wall_clock_sec": round(self.wall_clock_sec, 3)}) + "\n")
            if self.checkpoint_path is not None:
                fh.write(json.dumps({"checkpoint": self.checkpoint_path}) + "\n")
        os.replace(tmp, path)

    @staticmethod
    def load(path: str | os.PathLike) -> "TrainLog":
        log = TrainLog()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "loss" in rec:
                    log.step_records.append(rec)
                elif "test_acc" in rec:
                    log.eval_records.append(rec)
                elif "wall_clock_sec" in rec:
                    log.wall_clock_sec = rec["wall_clock_sec"]
                elif "checkpoint" in rec:
                    log.checkpoint_path = rec["checkpoint"]
        return log


def _derive_seed(*parts) -> int:
    digest = hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1  # keep it positive


def step_losses(
    model: MDLModel, batch: Batch, scheme: WeightingScheme
) -> tuple[torch.Tensor, TaskLossVector]:
    """Weighted joint loss over one mixed batch.

    Per present task t, L_t is the mean cross-entropy of head t over the
    batch's task-t samples; the total is sum_t lambda_t * L_t plus the
    scheme's regularizer when it has one. Tasks absent from the batch
    contribute nothing.
    """
    tasks = np.unique(batch.tasks)
    for t in tasks:
        if str(int(t)) not in model.heads:
            raise TrainingError(f"batch contains unknown task label {int(t)}")

    images = images_to_tensor(batch.images)
    feats = model.backbone(images)
    labels = torch.from_numpy(batch.labels)

    task_losses: dict[int, torch.Tensor] = {}
    for t in tasks:
        mask = np.flatnonzero(batch.tasks == t)
        idx = torch.from_numpy(mask)
        logits = model.heads[str(int(t))](feats[idx])
        task_losses[int(t)] = F.cross_entropy(logits, labels[idx])

    tlv = TaskLossVector({t: float(l.detach()) for t, l in task_losses.items()})
    weights, regularizer = scheme.compute(tlv)
    scheme.last_weights = {
        t: float(w.detach()) if isinstance(w, torch.Tensor) else float(w)
        for t, w in weights.items()
    }

    total = None
    for t, loss in task_losses.items():
        term = weights[t] * loss
        total = term if total is None else total + term
    if regularizer is not None:
        total = total + regularizer
    return total, tlv


@torch.no_grad()
def evaluate(
    model: MDLModel, domain: Domain, model_id: str, batch_size: int = 512
) -> tuple[float, PredictionLog]:
    """Accuracy and per-sample predictions of a domain's own head on its test set.

    Predictions are the argmax of the sample's own-task logits; ties resolve
    to the lowest class index.
    """
    was_training = model.training
    model.eval()
    head = model.heads[str(domain.task_label)]
    test = domain.test
    preds = []
    for start in range(0, len(test), batch_size):
        images = images_to_tensor(test.images[start : start + batch_size])
        logits = head(model.backbone(images)).numpy()
        preds.append(np.argmax(logits, axis=1))
    if was_training:
        model.train()
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    records = [
        (sid, int(true), int(p))
        for sid, true, p in zip(test.sample_ids, test.labels, pred)
    ]
    log = PredictionLog(model_id=model_id, domain=domain.name, records=records)
    return log.accuracy, log


def _train(
    model: MDLModel,
    domains: Sequence[Domain],
    cfg: TrainConfig,
    milestone_fractions: Sequence[float],
    run_id: str,
) -> TrainLog:
    cfg.validate()
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)

    milestones = (
        cfg.lr_milestones
        if cfg.lr_milestones is not None
        else default_milestones(cfg.epochs, milestone_fractions)
    )
    tasks = [d.task_label for d in domains]
    scheme = make_scheme(cfg.weighting, tasks, cfg.cov_warmup_steps)

    param_groups = [{"params": list(model.parameters())}]
    extra = scheme.torch_parameters()
    if extra:
        param_groups.append({"params": extra, "weight_decay": 0.0})
    opt = torch.optim.SGD(
        param_groups, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )

    log = TrainLog()
    t_start = time.time()
    model.train()
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, milestones, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        epoch_seed = _derive_seed("epoch", cfg.seed, epoch)
        for batch in mixed_batches(domains, cfg.batch_size, epoch_seed):
            opt.zero_grad(set_to_none=True)
            total, tlv = step_losses(model, batch, scheme)
            total_val = float(total.detach())
            if not math.isfinite(total_val) or total_val > cfg.loss_guard:
                raise DivergenceError(
                    f"{run_id}: loss {total_val} at step {step} (epoch {epoch}) "
                    f"tripped the divergence guard"
                )
            total.backward()
            opt.step()
            for t in sorted(tlv.values):
                log.step_records.append(
                    {
                        "step": step,
                        "epoch": epoch,
                        "task": t,
                        "loss": round(tlv.values[t], 6),
                        "lambda": round(scheme.last_weights[t], 6),
                        "lr": lr,
                    }
                )
            step += 1
        model.eval()
        for dom in domains:
            acc, _ = evaluate(model, dom, model_id=run_id)
            log.eval_records.append(
                {"epoch": epoch, "domain": dom.name, "test_acc": round(acc, 4)}
            )
        model.train()

    model.eval()
    model.train_steps = step
    model.trial_seed = cfg.seed
    log.wall_clock_sec = time.time() - t_start
    return log


def train_single(
    domain: Domain, width: WidthConfig, cfg: TrainConfig, run_id: str = "single"
) -> tuple[MDLModel, TrainLog]:
    """Train a from-scratch baseline on one domain."""
    model = build_model(width, {domain.task_label: domain.num_classes}, seed=cfg.seed)
    log = _train(model, [domain], cfg, SINGLE_MILESTONE_FRACTIONS, run_id)
    return model, log


def train_joint(
    domains: Sequence[Domain], width: WidthConfig, cfg: TrainConfig, run_id: str = "joint"
) -> tuple[MDLModel, TrainLog]:
    """Jointly train one backbone with a head per domain on mixed batches."""
    if len(domains) < 2:
        raise TrainingError("train_joint needs at least two domains")
    labels = [d.task_label for d in domains]
    if len(set(labels)) != len(labels):
        raise TrainingError(f"duplicate task labels across domains: {labels}")
    head_sizes = {d.task_label: d.num_classes for d in domains}
    model = build_model(width, head_sizes, seed=cfg.seed)
    log = _train(model, domains, cfg, JOINT_MILESTONE_FRACTIONS, run_id)
    return model, log


def finetune(
    pretrained: MDLModel,
    target: Domain,
    width: WidthConfig,
    cfg: TrainConfig,
    source_head_dropped: bool = True,
    run_id: str = "finetune",
) -> tuple[MDLModel, TrainLog]:
    """Optimize a pretrained backbone towards one target domain.

    The backbone starts from the pretrained weights, the target gets a fresh
    head, and every parameter remains trainable under the single-domain
    schedule. ``source_head_dropped`` controls whether the source heads are
    carried along (they receive no gradient either way).
    """
    if pretrained.width != width:
        raise TrainingError(
            f"width mismatch: pretrained {pretrained.width} vs requested {width}"
        )
    head_sizes = {} if source_head_dropped else dict(pretrained.head_sizes)
    head_sizes[target.task_label] = target.num_classes
    model = build_model(width, head_sizes, seed=cfg.seed)
    with torch.no_grad():
        for (name, dst), (src_name, src) in zip(
            model.backbone.named_parameters(), pretrained.backbone.named_parameters()
        ):
            assert name == src_name
            dst.copy_(src)
        if not source_head_dropped:
            for t in pretrained.head_sizes:
                if t != target.task_label:
                    for dst, src in zip(
                        model.heads[str(t)].parameters(),
                        pretrained.heads[str(t)].parameters(),
                    ):
                        dst.copy_(src)
    log = _train(model, [target], cfg, SINGLE_MILESTONE_FRACTIONS, run_id)
    return model, log
