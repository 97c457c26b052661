"""Self-contained statistics: Pearson correlation, paired t-test, OLS fit.

p-values come from a Student-t CDF built on the regularized incomplete beta
function (continued-fraction evaluation), so no statistics library is needed
at runtime. For a two-sided test with statistic t and dof v the p-value is
I_{v/(v+t^2)}(v/2, 1/2) directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "StatsError",
    "StatResult",
    "FitResult",
    "regularized_incomplete_beta",
    "student_t_cdf",
    "two_sided_p",
    "pearson",
    "paired_ttest",
    "linear_fit",
    "delta_by_capacity",
]


class StatsError(ValueError):
    pass


@dataclass
class StatResult:
    statistic: float  # r for correlations, t for t-tests
    p_value: float
    dof: int
    n: int

    @property
    def significant_at_95(self) -> bool:
        return self.p_value < 0.05


@dataclass
class FitResult:
    slope: float
    intercept: float
    r_squared: float


# ---------------------------------------------------------------------------
# Incomplete beta / Student-t CDF
# ---------------------------------------------------------------------------

_MAX_ITER = 300
_CF_EPS = 1e-15


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise StatsError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise StatsError(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # use the branch where the continued fraction converges fast
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, dof: int) -> float:
    """P(T <= t) for Student's t with ``dof`` degrees of freedom."""
    if dof < 1:
        raise StatsError(f"dof must be >= 1, got {dof}")
    if math.isinf(t):
        return 0.0 if t < 0 else 1.0
    x = dof / (dof + t * t)
    tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x)
    return tail if t < 0 else 1.0 - tail


def two_sided_p(t: float, dof: int) -> float:
    if math.isnan(t):
        raise StatsError("t statistic is NaN")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


# ---------------------------------------------------------------------------
# Tests and fits
# ---------------------------------------------------------------------------

def _check_lengths(x: Sequence[float], y: Sequence[float], minimum: int, what: str) -> int:
    if len(x) != len(y):
        raise StatsError(f"{what}: length mismatch {len(x)} vs {len(y)}")
    if len(x) < minimum:
        raise StatsError(f"{what}: need at least {minimum} pairs, got {len(x)}")
    return len(x)


def pearson(x: Sequence[float], y: Sequence[float]) -> StatResult:
    """Product-moment correlation with a two-sided t-transform p-value."""
    n = _check_lengths(x, y, 3, "pearson")
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0.0 or syy == 0.0:
        raise StatsError("pearson: zero variance in an input vector")
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    dof = n - 2
    if abs(r) == 1.0:
        return StatResult(statistic=r, p_value=0.0, dof=dof, n=n)
    t = r * math.sqrt(dof / (1.0 - r * r))
    return StatResult(statistic=r, p_value=two_sided_p(t, dof), dof=dof, n=n)


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> StatResult:
    """Two-sided paired t-test on matched samples.

    Identical inputs (all differences zero) give t=0, p=1 by convention; a
    non-zero constant difference gives an infinite t and p=0.
    """
    n = _check_lengths(a, b, 2, "paired_ttest")
    d = [ai - bi for ai, bi in zip(a, b)]
    mean = sum(d) / n
    var = sum((v - mean) ** 2 for v in d) / (n - 1)
    dof = n - 1
    if var == 0.0:
        if mean == 0.0:
            return StatResult(statistic=0.0, p_value=1.0, dof=dof, n=n)
        return StatResult(statistic=math.copysign(math.inf, mean), p_value=0.0, dof=dof, n=n)
    t = mean / (math.sqrt(var) / math.sqrt(n))
    return StatResult(statistic=t, p_value=two_sided_p(t, dof), dof=dof, n=n)


def linear_fit(x: Sequence[float], y: Sequence[float]) -> FitResult:
    """Ordinary least squares line with R^2 = 1 - SS_res / SS_tot."""
    n = _check_lengths(x, y, 2, "linear_fit")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    if sxx == 0.0:
        raise StatsError("linear_fit: x is constant")
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    slope = sxy / sxx
    intercept = my - slope * mx
    ss_res = sum((b - (slope * a + intercept)) ** 2 for a, b in zip(x, y))
    ss_tot = sum((b - my) ** 2 for b in y)
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return FitResult(slope=slope, intercept=intercept, r_squared=r_squared)


def delta_by_capacity(series: Sequence[tuple[float, float]]) -> list[float]:
    """Successive metric changes along a width-ordered series.

    ``series`` is (width_key, value) pairs; width keys must be strictly
    increasing. Returns one difference per capacity increment.
    """
    if len(series) < 2:
        raise StatsError("delta_by_capacity needs at least two widths")
    widths = [w for w, _ in series]
    if any(w2 <= w1 for w1, w2 in zip(widths, widths[1:])):
        raise StatsError(f"widths must be strictly increasing, got {widths}")
    values = [v for _, v in series]
    return [v2 - v1 for v1, v2 in zip(values, values[1:])]
