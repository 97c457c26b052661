"""Per-task loss weights for joint training.

Three schemes share one interface so the trainer stays scheme-agnostic:

* uniform -- every task weight is 1.
* uncertainty -- weights 1/eps_t^2 with learnable noise scales, parameterized
  as s_t = log eps_t^2 for unconstrained optimization, plus the regularizer
  sum_t log(1 + eps_t^2) that keeps the weighted objective from collapsing.
* cov -- weights proportional to the coefficient of variation of each task's
  loss-ratio history, normalized to sum to one and rescaled by the task count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import torch
import torch.nn.functional as F

__all__ = [
    "TaskLossVector",
    "UncertaintyState",
    "CovHistory",
    "uniform_weights",
    "uncertainty_weights",
    "cov_update",
    "WeightingScheme",
    "make_scheme",
    "SCHEME_NAMES",
]

SCHEME_NAMES = ("uniform", "uncertainty", "cov")


@dataclass
class TaskLossVector:
    """Mean cross-entropy per task for one batch; absent tasks carry no value."""

    values: dict[int, float]
    present_tasks: set[int] = field(default_factory=set)

    def __post_init__(self):
        if not self.present_tasks:
            self.present_tasks = set(self.values)
        for t, v in self.values.items():
            if not math.isfinite(v):
                raise ValueError(f"non-finite loss for task {t}: {v}")


def uniform_weights(tasks: Iterable[int]) -> dict[int, float]:
    tasks = list(tasks)
    if not tasks:
        raise ValueError("uniform_weights needs a non-empty task set")
    return {t: 1.0 for t in tasks}


class UncertaintyState(torch.nn.Module):
    """Learnable log-variances s_t = log eps_t^2, one per task.

    Initialized at s = 0 (eps^2 = 1) so the scheme starts out identical to
    uniform weighting. The parameters are meant to be optimized jointly with
    the model, without weight decay.
    """

    def __init__(self, tasks: Iterable[int], init: float = 0.0):
        super().__init__()
        self.s = torch.nn.ParameterDict(
            {str(t): torch.nn.Parameter(torch.tensor(float(init))) for t in sorted(tasks)}
        )

    def tasks(self) -> list[int]:
        return sorted(int(t) for t in self.s)


def uncertainty_weights(state: UncertaintyState) -> tuple[dict[int, torch.Tensor], torch.Tensor]:
    """Weights exp(-s_t) and regularizer sum_t log(1 + exp(s_t)).

    Both outputs stay differentiable with respect to the s parameters.
    """
    weights = {int(t): torch.exp(-p) for t, p in state.s.items()}
    reg = torch.stack([F.softplus(p) for p in state.s.values()]).sum()
    return weights, reg


@dataclass
class _TaskStats:
    n: int = 0
    loss_mean: float = 0.0  # running mean of the raw loss
    ratio_mean: float = 0.0  # running mean of loss / loss_mean
    ratio_m2: float = 0.0  # Welford accumulator for the ratio variance

    def update(self, loss: float) -> None:
        self.n += 1
        self.loss_mean += (loss - self.loss_mean) / self.n
        ratio = loss / self.loss_mean if self.loss_mean != 0.0 else 1.0
        delta = ratio - self.ratio_mean
        self.ratio_mean += delta / self.n
        self.ratio_m2 += delta * (ratio - self.ratio_mean)

    def cov(self) -> float:
        if self.n < 2 or self.ratio_mean == 0.0:
            return 0.0
        std = math.sqrt(max(self.ratio_m2, 0.0) / (self.n - 1))
        return std / self.ratio_mean


@dataclass
class CovHistory:
    """Full-history loss statistics per task, updated one batch at a time."""

    tasks: tuple[int, ...]
    warmup_steps: int = 50
    stats: dict[int, _TaskStats] = field(default_factory=dict)

    def __post_init__(self):
        for t in self.tasks:
            self.stats.setdefault(t, _TaskStats())


def cov_update(history: CovHistory, losses: TaskLossVector) -> tuple[dict[int, float], CovHistory]:
    """Update running statistics with this batch's losses and return weights.

    Weights are T * c_t / sum(c) where c_t is the coefficient of variation of
    task t's loss-ratio history and T the task count. While any task is still
    in warmup, or when every c_t is zero, the scheme falls back to uniform.

    Tasks absent from the batch keep their statistics unchanged for this step
    but still receive a weight.
    """
    for t, loss in losses.values.items():
        if t not in history.stats:
            raise KeyError(f"task {t} not tracked by this CovHistory")
        history.stats[t].update(loss)

    n_tasks = len(history.tasks)
    warming = any(st.n <= history.warmup_steps for st in history.stats.values())
    covs = {t: history.stats[t].cov() for t in history.tasks}
    total = sum(covs.values())
    if warming or total == 0.0:
        return {t: 1.0 for t in history.tasks}, history
    return {t: n_tasks * covs[t] / total for t in history.tasks}, history


# ---------------------------------------------------------------------------
# Trainer-facing interface
# ---------------------------------------------------------------------------

class WeightingScheme:
    """Uniform call surface over the three weighting methods.

    ``compute`` maps a batch's task losses to (weights, regularizer-or-None);
    for the uncertainty scheme the weights and regularizer are tensors tied
    to the learnable parameters returned by ``torch_parameters``.
    """

    name: str = "uniform"

    def torch_parameters(self) -> list[torch.nn.Parameter]:
        return []

    def compute(
        self, losses: TaskLossVector
    ) -> tuple[Mapping[int, float | torch.Tensor], torch.Tensor | None]:
        raise NotImplementedError


class _Uniform(WeightingScheme):
    name = "uniform"

    def __init__(self, tasks: Iterable[int]):
        self._tasks = sorted(tasks)

    def compute(self, losses):
        return uniform_weights(self._tasks), None


class _Uncertainty(WeightingScheme):
    name = "uncertainty"

    def __init__(self, tasks: Iterable[int]):
        self.state = UncertaintyState(tasks)

    def torch_parameters(self):
        return list(self.state.parameters())

    def compute(self, losses):
        return uncertainty_weights(self.state)


class _Cov(WeightingScheme):
    name = "cov"

    def __init__(self, tasks: Iterable[int], warmup_steps: int = 50):
        self.history = CovHistory(tasks=tuple(sorted(tasks)), warmup_steps=warmup_steps)

    def compute(self, losses):
        weights, _ = cov_update(self.history, losses)
        return weights, None


def make_scheme(name: str, tasks: Iterable[int], cov_warmup_steps: int = 50) -> WeightingScheme:
    if name == "uniform":
        return _Uniform(tasks)
    if name == "uncertainty":
        return _Uncertainty(tasks)
    if name == "cov":
        return _Cov(tasks, warmup_steps=cov_warmup_steps)
    raise ValueError(f"unknown weighting scheme {name!r}; expected one of {SCHEME_NAMES}")
