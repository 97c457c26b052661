"""Experiment grid configuration.

A grid is declared in a single JSON document: the domains, the width
multipliers, the loss weightings, the domain pairings to train jointly, the
trial count, training overrides, and which experiment arms to run. Unknown
keys are rejected so typos fail loudly. The artifact root defaults to
``out_dir`` and can be overridden with the ``MDLLENS_CACHE`` environment
variable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields as dc_fields

from .data import DomainSpec, ImageFolderSource, SyntheticDomainParams
from .training import TrainConfig
from .weighting import SCHEME_NAMES

__all__ = ["ConfigError", "TrainRules", "ExperimentConfig", "load_config"]

CACHE_ENV_VAR = "MDLLENS_CACHE"


class ConfigError(ValueError):
    """Configuration schema violation, with a field-level message."""


def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing required keys {sorted(missing)}")


@dataclass(frozen=True)
class TrainRules:
    """Shared training hyperparameters plus per-kind epoch budgets."""

    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: float = 0.1
    single_epochs: int = 60
    joint_epochs: int = 75
    finetune_epochs: int = 60
    cov_warmup_steps: int = 50
    threads: int = 1

    def config_for(self, kind: str, seed: int, weighting: str = "uniform") -> TrainConfig:
        epochs = {
            "single": self.single_epochs,
            "joint": self.joint_epochs,
            "finetune": self.finetune_epochs,
        }[kind]
        return TrainConfig(
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epochs=epochs,
            lr_decay=self.lr_decay,
            seed=seed,
            weighting=weighting,
            cov_warmup_steps=self.cov_warmup_steps,
            threads=self.threads,
        )


@dataclass
class ExperimentConfig:
    domains: list[DomainSpec]
    widths: list[float]
    weightings: list[str]
    pairings: list[tuple[str, ...]]
    trials: int
    train: TrainRules
    mdl_arm: bool
    transfer_learning_arm: bool
    out_dir: str
    probe_per_class: int = 50
    probe_seed: int = 0

    @property
    def artifact_root(self) -> str:
        return os.environ.get(CACHE_ENV_VAR) or self.out_dir

    def domain_by_name(self, name: str) -> DomainSpec:
        for spec in self.domains:
            if spec.name == name:
                return spec
        raise ConfigError(f"unknown domain {name!r}")

    def task_label(self, name: str) -> int:
        for i, spec in enumerate(self.domains):
            if spec.name == name:
                return i
        raise ConfigError(f"unknown domain {name!r}")

    def tl_ordered_pairs(self) -> list[tuple[str, str]]:
        """Ordered (source, target) pairs among domains that share a pairing."""
        pairs = set()
        for pairing in self.pairings:
            if len(pairing) < 2:
                continue
            for a in pairing:
                for b in pairing:
                    if a != b:
                        pairs.add((a, b))
        return sorted(pairs)


def _parse_source(obj: dict, spec_obj: dict, where: str):
    _require_keys(
        obj,
        allowed={
            "type",
            "shift_seed",
            "noise_std",
            "test_per_class",
            "train_root",
            "test_root",
        },
        required={"type"},
        where=where,
    )
    kind = obj["type"]
    if kind == "synthetic":
        _require_keys(
            obj,
            allowed={"type", "shift_seed", "noise_std", "test_per_class"},
            required={"test_per_class"},
            where=where,
        )
        return SyntheticDomainParams(
            num_classes=spec_obj["num_classes"],
            train_per_class=spec_obj["train_per_class"],
            test_per_class=int(obj["test_per_class"]),
            shift_seed=int(obj.get("shift_seed", 0)),
            noise_std=float(obj.get("noise_std", 0.12)),
        )
    if kind == "image_folder":
        _require_keys(
            obj,
            allowed={"type", "train_root", "test_root", "test_per_class"},
            required={"train_root", "test_root"},
            where=where,
        )
        tpc = obj.get("test_per_class")
        return ImageFolderSource(
            train_root=str(obj["train_root"]),
            test_root=str(obj["test_root"]),
            test_per_class=None if tpc is None else int(tpc),
        )
    raise ConfigError(f"{where}: unknown source type {kind!r}")


def _parse_domain(obj: dict, index: int) -> DomainSpec:
    where = f"domains[{index}]"
    _require_keys(
        obj,
        allowed={
            "name",
            "num_classes",
            "train_per_class",
            "source",
            "image_size",
            "resize_method",
            "class_subset_seed",
            "sample_subset_seed",
        },
        required={"name", "num_classes", "train_per_class", "source"},
        where=where,
    )
    spec = DomainSpec(
        name=str(obj["name"]),
        num_classes=int(obj["num_classes"]),
        train_per_class=int(obj["train_per_class"]),
        source=_parse_source(obj["source"], obj, f"{where}.source"),
        image_size=int(obj.get("image_size", 32)),
        resize_method=str(obj.get("resize_method", "bicubic")),
        class_subset_seed=int(obj.get("class_subset_seed", 0)),
        sample_subset_seed=int(obj.get("sample_subset_seed", 0)),
    )
    try:
        spec.validate()
    except Exception as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return spec


def parse_config(doc: dict) -> ExperimentConfig:
    _require_keys(
        doc,
        allowed={
            "domains",
            "widths",
            "weightings",
            "pairings",
            "trials",
            "train",
            "arms",
            "out_dir",
            "probe",
        },
        required={"domains", "widths", "pairings", "out_dir"},
        where="config",
    )
    domains = [_parse_domain(d, i) for i, d in enumerate(doc["domains"])]
    names = [d.name for d in domains]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate domain names: {names}")

    widths = [float(w) for w in doc["widths"]]
    if not widths or any(w <= 0 for w in widths):
        raise ConfigError(f"widths must be positive and non-empty, got {widths}")
    if len(set(widths)) != len(widths):
        raise ConfigError(f"duplicate widths: {widths}")

    weightings = list(doc.get("weightings", ["uniform"]))
    for w in weightings:
        if w not in SCHEME_NAMES:
            raise ConfigError(f"weightings: unknown scheme {w!r} (expected {SCHEME_NAMES})")

    pairings = []
    for i, pairing in enumerate(doc["pairings"]):
        if not pairing:
            raise ConfigError(f"pairings[{i}]: empty pairing")
        for name in pairing:
            if name not in names:
                raise ConfigError(f"pairings[{i}]: unknown domain {name!r}")
        if len(set(pairing)) != len(pairing):
            raise ConfigError(f"pairings[{i}]: repeated domain in {pairing}")
        pairings.append(tuple(pairing))

    trials = int(doc.get("trials", 3))
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")

    train_obj = doc.get("train", {})
    allowed_train = {f.name for f in dc_fields(TrainRules)}
    _require_keys(train_obj, allowed=allowed_train, required=set(), where="train")
    train = TrainRules(**train_obj)

    arms = doc.get("arms", {})
    _require_keys(arms, allowed={"mdl", "transfer_learning"}, required=set(), where="arms")

    probe = doc.get("probe", {})
    _require_keys(probe, allowed={"per_class", "seed"}, required=set(), where="probe")

    return ExperimentConfig(
        domains=domains,
        widths=sorted(widths),
        weightings=weightings,
        pairings=pairings,
        trials=trials,
        train=train,
        mdl_arm=bool(arms.get("mdl", True)),
        transfer_learning_arm=bool(arms.get("transfer_learning", False)),
        out_dir=str(doc["out_dir"]),
        probe_per_class=int(probe.get("per_class", 50)),
        probe_seed=int(probe.get("seed", 0)),
    )


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return parse_config(doc)
