"""Robust treatment-effect estimation with Student's-t regression adjustment.

The main entry points are :func:`state_estimate` for count metrics,
:func:`build_transform` plus :func:`state_on_ratio` for ratio metrics, and
:func:`run_monte_carlo` for simulation studies.
"""

from state_ate.data import (
    ExperimentFrame,
    FrameValidationError,
    MetricKind,
    MetricSpec,
    group_means,
    validate_frame,
)
from state_ate.estimators import (
    Flavor,
    cuped,
    dim_count,
    dim_ratio,
    huber_regression,
    ratio_cuped_delta,
    regression_adjusted,
    winsorize,
)
from state_ate.inference import normal_cdf, normal_quantile, z_interval, z_test
from state_ate.predictors import PredictorConfig, ProxyColumn, assign_folds, fit_proxy, proxy_for_p
from state_ate.ratio import RatioTransform, build_transform, delta_var_ratio, dim_on_p, state_on_ratio
from state_ate.registry import REGISTRY, EstimationContext, run_estimators
from state_ate.report import AteReport
from state_ate.simulation import (
    DgpConfig,
    generate_pool,
    inject_outliers,
    run_monte_carlo,
    sweep_outlier_fraction,
)
from state_ate.state_em import EmConfig, TRegressionFit, fit_state, fit_t_regression, state_estimate

__all__ = [
    "AteReport", "DgpConfig", "EmConfig", "EstimationContext", "ExperimentFrame", "Flavor",
    "FrameValidationError", "MetricKind", "MetricSpec", "PredictorConfig", "ProxyColumn",
    "REGISTRY", "RatioTransform", "TRegressionFit", "assign_folds", "build_transform", "cuped",
    "delta_var_ratio", "dim_count", "dim_on_p", "dim_ratio", "fit_proxy", "fit_state",
    "fit_t_regression", "generate_pool", "group_means", "huber_regression", "inject_outliers",
    "normal_cdf", "normal_quantile", "proxy_for_p", "ratio_cuped_delta", "regression_adjusted",
    "run_estimators", "run_monte_carlo", "state_estimate", "state_on_ratio",
    "sweep_outlier_fraction", "validate_frame", "winsorize", "z_interval", "z_test",
]
