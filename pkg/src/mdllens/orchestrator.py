"""Experiment grid runner: plan rows, execute them with resume, track artifacts.

A grid is a catalog of independent runs (single-domain baselines, joint
multi-domain models, and pretrain-finetune transfer runs). Each row's seed is
a stable hash of its identity, so extending a config never reshuffles the
seeds of existing rows. The catalog file is the only shared artifact; it is
rewritten atomically after every row, which makes killing and resuming a grid
safe: completed rows are verified by checkpoint hash and skipped.
"""

from __future__ import annotations

import hashlib
import json
import os
import traceback
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import asdict, dataclass, field

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import build_domain
from .metrics import write_prediction_log
from .models import WidthConfig
from .training import evaluate, finetune, train_joint, train_single

__all__ = [
    "OrchestratorError",
    "MissingRunsError",
    "RunRow",
    "RunCatalog",
    "plan",
    "execute",
    "run_seed",
    "single_run_id",
]


class OrchestratorError(RuntimeError):
    pass


class MissingRunsError(OrchestratorError):
    """Raised when analysis prerequisites have not completed."""

    def __init__(self, missing: list[str]):
        super().__init__(
            "missing prerequisite runs: " + ", ".join(missing[:10])
            + (f" (+{len(missing) - 10} more)" if len(missing) > 10 else "")
        )
        self.missing = missing


def _fmt_width(multiplier: float) -> str:
    return f"{multiplier:g}"


def run_seed(kind: str, pairing: tuple[str, ...], width: float, weighting: str, trial: int) -> int:
    key = f"{kind}|{'+'.join(pairing)}|w{_fmt_width(width)}|{weighting}|t{trial}"
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 33  # 31-bit positive seed


def single_run_id(domain: str, width: float, trial: int) -> str:
    return f"single_{domain}_w{_fmt_width(width)}_t{trial}"


def joint_run_id(pairing: tuple[str, ...], width: float, weighting: str, trial: int) -> str:
    return f"joint_{'+'.join(pairing)}_w{_fmt_width(width)}_{weighting}_t{trial}"


def finetune_run_id(source: str, target: str, width: float, trial: int) -> str:
    return f"ft_{source}->{target}_w{_fmt_width(width)}_t{trial}"


@dataclass
class RunRow:
    run_id: str
    kind: str  # single | joint | finetune
    pairing: tuple[str, ...]  # (domain,) / joint members / (source, target)
    width: float
    weighting: str
    trial: int
    seed: int
    checkpoint: str
    trainlog: str
    predictions: dict[str, str] = field(default_factory=dict)
    status: str = "pending"  # pending | completed | failed
    error: str | None = None
    checkpoint_sha256: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pairing"] = list(self.pairing)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunRow":
        d = dict(d)
        d["pairing"] = tuple(d["pairing"])
        return RunRow(**d)


@dataclass
class RunCatalog:
    fingerprint: str
    rows: list[RunRow]

    def by_id(self) -> dict[str, RunRow]:
        return {r.run_id: r for r in self.rows}

    def pending(self) -> list[RunRow]:
        return [r for r in self.rows if r.status != "completed"]

    def save(self, path: str | os.PathLike) -> None:
        doc = {
            "fingerprint": self.fingerprint,
            "rows": [r.to_dict() for r in sorted(self.rows, key=lambda r: r.run_id)],
        }
        tmp = f"{os.fspath(path)}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)

    @staticmethod
    def load(path: str | os.PathLike) -> "RunCatalog":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return RunCatalog(
            fingerprint=doc["fingerprint"],
            rows=[RunRow.from_dict(r) for r in doc["rows"]],
        )


def catalog_path(config: ExperimentConfig) -> str:
    return os.path.join(config.artifact_root, "catalog.json")


def config_fingerprint(config: ExperimentConfig) -> str:
    ident = {
        "domains": [
            {
                "name": d.name,
                "num_classes": d.num_classes,
                "train_per_class": d.train_per_class,
                "image_size": d.image_size,
                "resize_method": d.resize_method,
                "class_subset_seed": d.class_subset_seed,
                "sample_subset_seed": d.sample_subset_seed,
                "source": repr(d.source),
            }
            for d in config.domains
        ],
        "widths": config.widths,
        "weightings": config.weightings,
        "pairings": [list(p) for p in config.pairings],
        "trials": config.trials,
        "train": asdict(config.train),
        "arms": [config.mdl_arm, config.transfer_learning_arm],
    }
    canon = json.dumps(ident, sort_keys=True)
    return hashlib.blake2b(canon.encode(), digest_size=16).hexdigest()


def _run_dir(root: str, run_id: str) -> str:
    return os.path.join(root, "runs", run_id)


def _make_row(root: str, run_id: str, kind: str, pairing: tuple[str, ...], width: float,
              weighting: str, trial: int, pred_domains: tuple[str, ...]) -> RunRow:
    rdir = _run_dir(root, run_id)
    return RunRow(
        run_id=run_id,
        kind=kind,
        pairing=pairing,
        width=width,
        weighting=weighting,
        trial=trial,
        seed=run_seed(kind, pairing, width, weighting, trial),
        checkpoint=os.path.join(rdir, "checkpoint.zip"),
        trainlog=os.path.join(rdir, "trainlog.jsonl"),
        predictions={d: os.path.join(rdir, f"pred_{d}.jsonl") for d in pred_domains},
    )


def plan(config: ExperimentConfig) -> RunCatalog:
    """Enumerate every run the config demands. Idempotent and deterministic."""
    root = config.artifact_root
    rows: dict[str, RunRow] = {}

    for spec in config.domains:
        for width in config.widths:
            for trial in range(config.trials):
                rid = single_run_id(spec.name, width, trial)
                rows[rid] = _make_row(
                    root, rid, "single", (spec.name,), width, "uniform", trial, (spec.name,)
                )

    if config.mdl_arm:
        for pairing in config.pairings:
            if len(pairing) < 2:
                continue  # size-1 pairings are baselines, enumerated above
            for width in config.widths:
                for weighting in config.weightings:
                    for trial in range(config.trials):
                        rid = joint_run_id(pairing, width, weighting, trial)
                        rows[rid] = _make_row(
                            root, rid, "joint", pairing, width, weighting, trial, pairing
                        )

    if config.transfer_learning_arm:
        for source, target in config.tl_ordered_pairs():
            for width in config.widths:
                for trial in range(config.trials):
                    rid = finetune_run_id(source, target, width, trial)
                    rows[rid] = _make_row(
                        root, rid, "finetune", (source, target), width, "uniform", trial, (target,)
                    )

    ordered = [rows[k] for k in sorted(rows)]
    return RunCatalog(fingerprint=config_fingerprint(config), rows=ordered)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _row_artifacts_ok(row: RunRow) -> bool:
    paths = [row.checkpoint, row.trainlog, *row.predictions.values()]
    if not all(os.path.isfile(p) for p in paths):
        return False
    return row.checkpoint_sha256 is not None and _sha256(row.checkpoint) == row.checkpoint_sha256


def _execute_row(row_dict: dict, config: ExperimentConfig) -> dict:
    """Run one catalog row in isolation; returns the updated row dict."""
    row = RunRow.from_dict(row_dict)
    try:
        os.makedirs(_run_dir(config.artifact_root, row.run_id), exist_ok=True)
        width = WidthConfig(row.width)
        cfg = config.train.config_for(
            {"single": "single", "joint": "joint", "finetune": "finetune"}[row.kind],
            seed=row.seed,
            weighting=row.weighting if row.kind == "joint" else "uniform",
        )
        if row.kind == "single":
            name = row.pairing[0]
            domain = build_domain(config.domain_by_name(name), config.task_label(name))
            model, log = train_single(domain, width, cfg, run_id=row.run_id)
            eval_domains = [domain]
        elif row.kind == "joint":
            domains = [
                build_domain(config.domain_by_name(n), config.task_label(n))
                for n in row.pairing
            ]
            model, log = train_joint(domains, width, cfg, run_id=row.run_id)
            eval_domains = domains
        elif row.kind == "finetune":
            source, target = row.pairing
            src_row_ckpt = os.path.join(
                _run_dir(config.artifact_root, single_run_id(source, row.width, row.trial)),
                "checkpoint.zip",
            )
            pretrained = load_checkpoint(src_row_ckpt)
            domain = build_domain(config.domain_by_name(target), config.task_label(target))
            model, log = finetune(pretrained, domain, width, cfg, run_id=row.run_id)
            eval_domains = [domain]
        else:
            raise OrchestratorError(f"unknown run kind {row.kind!r}")

        for domain in eval_domains:
            _, plog = evaluate(model, domain, model_id=row.run_id)
            write_prediction_log(plog, row.predictions[domain.name])
        save_checkpoint(model, row.checkpoint)
        log.checkpoint_path = row.checkpoint
        log.save(row.trainlog)

        row.status = "completed"
        row.error = None
        row.checkpoint_sha256 = _sha256(row.checkpoint)
    except Exception:
        row.status = "failed"
        row.error = traceback.format_exc(limit=20)
    return row.to_dict()


_KIND_WAVE = {"single": 0, "joint": 1, "finetune": 1}


def execute(
    config: ExperimentConfig,
    catalog: RunCatalog,
    resume: bool = False,
    workers: int = 1,
    max_runs: int | None = None,
) -> RunCatalog:
    """Execute pending rows in dependency order (baselines before finetunes).

    With ``resume``, rows already completed keep their artifacts after hash
    verification; anything unverifiable is re-run. Row failures are recorded
    and do not abort the grid. ``max_runs`` bounds how many rows are executed
    in this call, leaving the rest pending for a later resume.
    """
    os.makedirs(config.artifact_root, exist_ok=True)
    cpath = catalog_path(config)

    if resume and os.path.isfile(cpath):
        on_disk = RunCatalog.load(cpath)
        if on_disk.fingerprint != catalog.fingerprint:
            raise OrchestratorError(
                "catalog on disk was produced by a different config "
                f"(fingerprint {on_disk.fingerprint} vs {catalog.fingerprint}); "
                "refusing to resume"
            )
        known = on_disk.by_id()
        for row in catalog.rows:
            prev = known.get(row.run_id)
            if prev and prev.status == "completed" and _row_artifacts_ok(prev):
                row.status = prev.status
                row.error = prev.error
                row.checkpoint_sha256 = prev.checkpoint_sha256

    catalog.save(cpath)
    budget = max_runs if max_runs is not None else len(catalog.rows)
    by_id = catalog.by_id()

    for wave in (0, 1):
        pending = [
            r for r in catalog.rows
            if r.status != "completed" and _KIND_WAVE[r.kind] == wave
        ]
        # widest runs first: with few workers this shortens the makespan
        pending.sort(key=lambda r: (-r.width, r.run_id))
        pending = pending[: max(0, budget)]
        if not pending:
            continue
        budget -= len(pending)

        if workers <= 1:
            for row in pending:
                result = RunRow.from_dict(_execute_row(row.to_dict(), config))
                by_id[row.run_id].__dict__.update(result.__dict__)
                catalog.save(cpath)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {
                    pool.submit(_execute_row, row.to_dict(), config): row.run_id
                    for row in pending
                }
                remaining = set(futures)
                while remaining:
                    done, remaining = wait(remaining, return_when=FIRST_COMPLETED)
                    for fut in done:
                        result = RunRow.from_dict(fut.result())
                        by_id[result.run_id].__dict__.update(result.__dict__)
                        catalog.save(cpath)
    return catalog
