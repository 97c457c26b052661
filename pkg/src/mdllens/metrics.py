"""Sample-wise performance-gain, interference, and transfer scores.

Given a baseline model's predictions on a test set, the set splits into the
samples it got right and the ones it got wrong. A jointly trained model is
then scored by where its correct predictions land:

* transfer    = share of the baseline's failures it now solves,
* interference = share of the baseline's successes it now misses,
* perfgain    = its accuracy change over the whole test set.

With k correct among the baseline's n_correct successes and k' correct among
its n_incorrect failures:

    perfgain     = 100 * (k + k' - n_correct) / n_total
    interference = 100 * (n_correct - k) / n_correct
    transfer     = 100 * k' / n_incorrect

so the integer identity (k + k' - n_correct) = k' - (n_correct - k) ties the
three together exactly. Degenerate denominators yield a score of 0 plus an
explicit undefined flag; aggregation excludes flagged values rather than
imputing them.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

__all__ = [
    "MetricsError",
    "PredictionLog",
    "EvaluationPartition",
    "MetricReport",
    "MetricAggregate",
    "AggregateReport",
    "partition",
    "mdl_scores",
    "aggregate",
    "write_prediction_log",
    "read_prediction_log",
]


class MetricsError(ValueError):
    pass


@dataclass
class PredictionLog:
    """Per-sample predictions of one model on one domain's test set."""

    model_id: str
    domain: str
    records: list[tuple[str, int, int]]  # (sample_id, true_label, pred_label)

    def __post_init__(self):
        seen = set()
        for sid, _, _ in self.records:
            if sid in seen:
                raise MetricsError(f"duplicate sample_id in log {self.model_id}: {sid}")
            seen.add(sid)

    @property
    def accuracy(self) -> float:
        if not self.records:
            return 0.0
        return 100.0 * sum(t == p for _, t, p in self.records) / len(self.records)

    def correct_ids(self) -> set[str]:
        return {sid for sid, t, p in self.records if t == p}


@dataclass
class EvaluationPartition:
    correct_ids: frozenset[str]
    incorrect_ids: frozenset[str]

    @property
    def total(self) -> int:
        return len(self.correct_ids) + len(self.incorrect_ids)


@dataclass
class MetricReport:
    perfgain: float
    interference: float
    transfer: float
    k: int
    k_prime: int
    n_correct: int
    n_incorrect: int
    n_total: int
    transfer_undefined: bool = False
    interference_undefined: bool = False


def partition(baseline: PredictionLog) -> EvaluationPartition:
    """Split the test set by the baseline's per-sample correctness."""
    if not baseline.records:
        raise MetricsError(f"empty prediction log: {baseline.model_id}/{baseline.domain}")
    correct = set()
    incorrect = set()
    for sid, true, pred in baseline.records:
        (correct if true == pred else incorrect).add(sid)
    return EvaluationPartition(frozenset(correct), frozenset(incorrect))


def mdl_scores(part: EvaluationPartition, mdl: PredictionLog) -> MetricReport:
    """Score a jointly trained model against a baseline-induced partition.

    The log must cover exactly the partition's sample ids; anything else is
    a hard error, never a silent join.
    """
    expected = part.correct_ids | part.incorrect_ids
    got = {sid for sid, _, _ in mdl.records}
    if got != expected:
        missing = sorted(expected - got)[:5]
        extra = sorted(got - expected)[:5]
        raise MetricsError(
            f"sample_id mismatch between partition and log {mdl.model_id}: "
            f"{len(expected - got)} missing (e.g. {missing}), "
            f"{len(got - expected)} unexpected (e.g. {extra})"
        )

    mdl_correct = mdl.correct_ids()
    k = len(mdl_correct & part.correct_ids)
    k_prime = len(mdl_correct & part.incorrect_ids)
    n_correct = len(part.correct_ids)
    n_incorrect = len(part.incorrect_ids)
    n_total = part.total

    perfgain = 100.0 * (k + k_prime - n_correct) / n_total
    if n_correct > 0:
        interference, inter_undef = 100.0 * (n_correct - k) / n_correct, False
    else:
        interference, inter_undef = 0.0, True
    if n_incorrect > 0:
        transfer, trans_undef = 100.0 * k_prime / n_incorrect, False
    else:
        transfer, trans_undef = 0.0, True

    return MetricReport(
        perfgain=perfgain,
        interference=interference,
        transfer=transfer,
        k=k,
        k_prime=k_prime,
        n_correct=n_correct,
        n_incorrect=n_incorrect,
        n_total=n_total,
        transfer_undefined=trans_undef,
        interference_undefined=inter_undef,
    )


@dataclass
class MetricAggregate:
    mean: float
    stderr: float | None  # None when fewer than two usable values
    n_used: int
    n_excluded: int


@dataclass
class AggregateReport:
    perfgain: MetricAggregate
    interference: MetricAggregate
    transfer: MetricAggregate
    n_reports: int


def _aggregate_values(values: list[float], n_excluded: int) -> MetricAggregate:
    n = len(values)
    if n == 0:
        return MetricAggregate(mean=math.nan, stderr=None, n_used=0, n_excluded=n_excluded)
    mean = sum(values) / n
    if n == 1:
        return MetricAggregate(mean=mean, stderr=None, n_used=1, n_excluded=n_excluded)
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return MetricAggregate(
        mean=mean, stderr=math.sqrt(var) / math.sqrt(n), n_used=n, n_excluded=n_excluded
    )


def aggregate(reports: list[MetricReport]) -> AggregateReport:
    """Mean and standard error per metric over a group of trials."""
    if not reports:
        raise MetricsError("cannot aggregate an empty report group")
    pg = [r.perfgain for r in reports]
    inter = [r.interference for r in reports if not r.interference_undefined]
    trans = [r.transfer for r in reports if not r.transfer_undefined]
    return AggregateReport(
        perfgain=_aggregate_values(pg, 0),
        interference=_aggregate_values(inter, len(reports) - len(inter)),
        transfer=_aggregate_values(trans, len(reports) - len(trans)),
        n_reports=len(reports),
    )


# ---------------------------------------------------------------------------
# On-disk format: one header object, then one record object per line
# ---------------------------------------------------------------------------

def write_prediction_log(log: PredictionLog, path: str | os.PathLike) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"model_id": log.model_id, "domain": log.domain}) + "\n")
        for sid, true, pred in log.records:
            fh.write(json.dumps({"sample_id": sid, "true": int(true), "pred": int(pred)}) + "\n")
    os.replace(tmp, path)


def read_prediction_log(path: str | os.PathLike) -> PredictionLog:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise MetricsError(f"empty prediction log file: {path}")
    header = json.loads(lines[0])
    records = []
    for ln in lines[1:]:
        obj = json.loads(ln)
        records.append((obj["sample_id"], int(obj["true"]), int(obj["pred"])))
    return PredictionLog(model_id=header["model_id"], domain=header["domain"], records=records)
