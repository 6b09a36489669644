"""Normal-reference confidence intervals and two-sided tests."""

from __future__ import annotations

import math
from statistics import NormalDist
from typing import NamedTuple

_STD_NORMAL = NormalDist()


class DomainError(ValueError):
    pass


class TestResult(NamedTuple):
    statistic: float
    p_value: float
    alpha: float
    reject: bool


def normal_cdf(x: float) -> float:
    # erfc keeps full relative precision in the lower tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile needs p in (0, 1), got {p!r}")
    return _STD_NORMAL.inv_cdf(p)


def two_sided_p(estimate: float, se: float) -> float:
    if se < 0 or math.isnan(se):
        raise ValueError("standard error must be non-negative")
    if se == 0.0:
        return 1.0 if estimate == 0.0 else 0.0
    return min(1.0, 2.0 * normal_sf(abs(estimate) / se))


def z_interval(estimate: float, se: float, alpha: float = 0.05) -> tuple[float, float, float]:
    """``(ci_low, ci_high, p_value)`` for ``H0: effect = 0``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    half = normal_quantile(1.0 - alpha / 2.0) * se
    return estimate - half, estimate + half, two_sided_p(estimate, se)


def z_test(estimate: float, se: float, alpha: float = 0.05) -> TestResult:
    stat = math.inf if se == 0 and estimate != 0 else (0.0 if se == 0 else estimate / se)
    p = two_sided_p(estimate, se)
    return TestResult(stat, p, alpha, p < alpha)
