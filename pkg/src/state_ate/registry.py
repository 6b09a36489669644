"""Named estimators runnable against one frame with shared, lazily fitted proxies."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from state_ate.data import ExperimentFrame, MetricKind
from state_ate.estimators import (
    HUBER_K,
    Flavor,
    cuped,
    dim_count,
    dim_ratio,
    huber_regression,
    ratio_cuped_delta,
    regression_adjusted,
    winsorize,
)
from state_ate.predictors import PredictorConfig, ProxyColumn, fit_proxy, proxy_for_p
from state_ate.ratio import RatioTransform, build_transform, dim_on_p, state_on_ratio
from state_ate.report import AteReport
from state_ate.state_em import EmConfig, state_estimate


@dataclass(eq=False)
class EstimationContext:
    """One frame plus everything the registered estimators may share.

    Proxies are fitted on first use and reused; pass ``proxy_y_override``
    or ``proxy_p_override`` to inject precomputed ones.
    """

    frame: ExperimentFrame
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    em: EmConfig = field(default_factory=EmConfig)
    alpha: float = 0.05
    winsor_percentile: float = 0.999
    huber_delta: float = HUBER_K
    cuped_covariates: np.ndarray | None = None
    se_method: str = "m_estimator"
    proxy_y_override: ProxyColumn | np.ndarray | None = None
    proxy_p_override: ProxyColumn | np.ndarray | None = None

    @cached_property
    def proxy_y(self):
        if self.proxy_y_override is not None:
            return self.proxy_y_override
        return fit_proxy(self.frame, self.predictor)

    @cached_property
    def transform(self) -> RatioTransform:
        return build_transform(self.frame)

    @cached_property
    def proxy_p(self):
        if self.proxy_p_override is not None:
            return self.proxy_p_override
        return proxy_for_p(self.frame, self.transform, self.predictor)

    @cached_property
    def winsorized(self) -> ExperimentFrame:
        return winsorize(self.frame, self.winsor_percentile)


@dataclass(frozen=True)
class EstimatorSpec:
    name: str
    metric: MetricKind
    run: Callable[[EstimationContext], AteReport]
    needs_proxy: bool = False


_SPECS = [
    EstimatorSpec("dim", MetricKind.COUNT, lambda c: dim_count(c.frame, c.alpha)),
    EstimatorSpec("cuped", MetricKind.COUNT,
                  lambda c: cuped(c.frame, c.cuped_covariates, c.alpha)),
    EstimatorSpec("cupac", MetricKind.COUNT,
                  lambda c: regression_adjusted(c.frame, c.proxy_y, Flavor.CUPAC, c.alpha), True),
    EstimatorSpec("mlrate", MetricKind.COUNT,
                  lambda c: regression_adjusted(c.frame, c.proxy_y, Flavor.MLRATE, c.alpha), True),
    EstimatorSpec("state", MetricKind.COUNT,
                  lambda c: state_estimate(c.frame, c.proxy_y, c.em, c.alpha, c.se_method), True),
    EstimatorSpec("winsorized_dim", MetricKind.COUNT,
                  lambda c: dim_count(c.winsorized, c.alpha, tag="winsorized_dim")),
    EstimatorSpec("winsorized_cuped", MetricKind.COUNT,
                  lambda c: cuped(c.winsorized, c.cuped_covariates, c.alpha, tag="winsorized_cuped")),
    EstimatorSpec("winsorized_cupac", MetricKind.COUNT,
                  lambda c: regression_adjusted(c.winsorized, c.proxy_y, Flavor.CUPAC, c.alpha,
                                                tag="winsorized_cupac"), True),
    EstimatorSpec("winsorized_mlrate", MetricKind.COUNT,
                  lambda c: regression_adjusted(c.winsorized, c.proxy_y, Flavor.MLRATE, c.alpha,
                                                tag="winsorized_mlrate"), True),
    EstimatorSpec("huber", MetricKind.COUNT,
                  lambda c: huber_regression(c.frame, c.proxy_y, c.huber_delta, c.alpha), True),
    EstimatorSpec("ratio_dim", MetricKind.RATIO, lambda c: dim_ratio(c.frame, c.alpha)),
    EstimatorSpec("ratio_cuped_delta", MetricKind.RATIO,
                  lambda c: ratio_cuped_delta(c.frame, c.cuped_covariates, c.alpha)),
    EstimatorSpec("ratio_transformed_dim", MetricKind.RATIO,
                  lambda c: dim_on_p(c.frame, c.transform, c.alpha).delta_u),
    EstimatorSpec("ratio_state", MetricKind.RATIO,
                  lambda c: state_on_ratio(c.frame, c.transform, c.proxy_p, c.em, c.alpha,
                                           c.se_method).delta_u, True),
]

REGISTRY: dict[str, EstimatorSpec] = {s.name: s for s in _SPECS}
BASELINE = {MetricKind.COUNT: "dim", MetricKind.RATIO: "ratio_dim"}


def get_spec(name: str) -> EstimatorSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown estimator {name!r}; choose from {sorted(REGISTRY)}") from None


def run_estimators(ctx: EstimationContext, names) -> dict[str, AteReport]:
    return {name: get_spec(name).run(ctx) for name in names}
