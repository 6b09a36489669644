from state_ate.predictors.basis import BasisRidge, expand_basis
from state_ate.predictors.folds import FoldAssignment, assign_folds
from state_ate.predictors.proxy import (
    Family,
    PredictorConfig,
    ProxyColumn,
    TrainOn,
    fit_proxy,
    proxy_for_p,
)
from state_ate.predictors.trees import GradientBoostedTrees, TreeParams

__all__ = [
    "BasisRidge", "expand_basis", "FoldAssignment", "assign_folds", "Family",
    "PredictorConfig", "ProxyColumn", "TrainOn", "fit_proxy", "proxy_for_p",
    "GradientBoostedTrees", "TreeParams",
]
