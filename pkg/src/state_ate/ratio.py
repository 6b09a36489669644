"""Linearisation of ratio metrics into per-unit labels.

For a ratio metric ``R = sum(Y) / sum(Z)`` each unit gets the label
``P_i = kappa1 * Y_i - kappa2 * Z_i`` with ``kappa1`` and ``kappa2`` the
control-group means of ``Z`` and ``Y``.  Then
``mean(P | T=1) - mean(P | T=0) = Zbar_t * Zbar_c * (R_t - R_c)`` exactly,
and dividing by ``E[Z_t] E[Z_c]`` gives an unbiased estimate of the ratio
ATE whose variance matches the delta-method variance of ``R_t - R_c``
when the treatment moves the ratio only slightly.  Because the divisor
is a positive constant, a test on the ``P`` difference is a test on the
ratio effect, so any count-metric estimator (including the t-regression)
can be run on ``P``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from state_ate.data import ExperimentFrame, FrameValidationError, MetricKind, MetricSpec, Violation, group_means
from state_ate.errors import ZeroDenominator
from state_ate.estimators import dim_count
from state_ate.report import AteReport
from state_ate.state_em import EmConfig, state_estimate


@dataclass(frozen=True, eq=False)
class RatioTransform:
    kappa1: float
    kappa2: float
    p: np.ndarray
    # realised Zbar_t * Zbar_c; plug-in for the unknown E[Z_t] E[Z_c]
    scale: float


class RatioResult(NamedTuple):
    delta_p: AteReport
    delta_u: AteReport


_RATIO = MetricSpec(MetricKind.RATIO, "y", "z")


def build_transform(frame: ExperimentFrame) -> RatioTransform:
    if frame.z is None:
        raise ZeroDenominator("ratio metric needs a denominator column")
    if frame.n_c < 2 or frame.n_t < 1:
        raise FrameValidationError([Violation("DegenerateGroup", None, "control group needs >= 2 units")])
    t = frame.treated
    kappa1 = float(np.mean(frame.z[~t]))
    kappa2 = float(np.mean(frame.y[~t]))
    if not kappa1 > 0:
        raise ZeroDenominator("control mean of the denominator must be positive")
    zt = float(np.mean(frame.z[t]))
    if not zt > 0:
        raise ZeroDenominator("treated mean of the denominator must be positive")
    p = kappa1 * frame.y - kappa2 * frame.z
    p.flags.writeable = False
    return RatioTransform(kappa1, kappa2, p, zt * kappa1)


def dim_on_p(frame: ExperimentFrame, transform: RatioTransform, alpha: float = 0.05,
             tag: str = "ratio_transformed_dim") -> RatioResult:
    """Difference in means of ``P``, plus the same report rescaled to the ratio effect."""
    rep = dim_count(frame, alpha, y=transform.p, tag=f"{tag}[delta_p]")
    return RatioResult(rep, rep.scaled(1.0 / transform.scale, tag))


def state_on_ratio(frame: ExperimentFrame, transform: RatioTransform, proxy_p,
                   config: EmConfig | None = None, alpha: float = 0.05,
                   se_method: str = "m_estimator", tag: str = "ratio_state") -> RatioResult:
    """t-regression of ``P`` on ``[1, T, proxy_p]``; ``a1`` estimates the ``P`` difference."""
    rep = state_estimate(frame, proxy_p, config, alpha, se_method, y=transform.p, tag=f"{tag}[delta_p]")
    return RatioResult(rep, rep.scaled(1.0 / transform.scale, tag))


def group_ratio_variance(n: int, mean_y: float, mean_z: float, var_y: float, var_z: float, cov_yz: float) -> float:
    """Delta-method variance of ``mean(Y) / mean(Z)`` from unit-level moments."""
    if not mean_z > 0:
        raise ZeroDenominator("group mean of the denominator must be positive")
    dy, dz, cyz = var_y / n, var_z / n, cov_yz / n
    return dy / mean_z**2 + mean_y**2 / mean_z**4 * dz - 2.0 * mean_y / mean_z**3 * cyz


def delta_var_ratio(frame: ExperimentFrame) -> float:
    """Plug-in delta-method variance of ``R_t - R_c`` (groups independent)."""
    if frame.z is None:
        raise ZeroDenominator("ratio metric needs a denominator column")
    total = 0.0
    for g in group_means(frame, _RATIO):
        total += group_ratio_variance(g.n, g.mean_y, g.mean_z, g.var_y, g.var_z, g.cov_yz)
    # exact cancellation (Y proportional to Z) can leave a tiny negative
    return max(total, 0.0)


def ratio_se(frame: ExperimentFrame) -> float:
    return math.sqrt(delta_var_ratio(frame))
