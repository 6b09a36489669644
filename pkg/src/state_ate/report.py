"""The common result record returned by every ATE estimator."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from state_ate.inference import z_interval


@dataclass(frozen=True)
class AteReport:
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    p_value: float
    estimator_tag: str
    n_used: int

    def to_dict(self) -> dict:
        return asdict(self)

    def covers(self, truth: float) -> bool:
        return self.ci_low <= truth <= self.ci_high

    def scaled(self, factor: float, tag: str | None = None) -> AteReport:
        """Report for ``factor * effect``; the test statistic is unchanged for ``factor > 0``."""
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        return AteReport(
            estimate=self.estimate * factor,
            std_error=self.std_error * factor,
            ci_low=self.ci_low * factor,
            ci_high=self.ci_high * factor,
            p_value=self.p_value,
            estimator_tag=tag or self.estimator_tag,
            n_used=self.n_used,
        )


def make_report(estimate: float, std_error: float, tag: str, n_used: int, alpha: float = 0.05) -> AteReport:
    estimate = float(estimate)
    std_error = float(std_error)
    if not (math.isfinite(estimate) and math.isfinite(std_error)):
        raise ValueError(f"{tag}: non-finite estimate or standard error")
    lo, hi, p = z_interval(estimate, std_error, alpha)
    return AteReport(estimate, std_error, lo, hi, p, tag, int(n_used))
