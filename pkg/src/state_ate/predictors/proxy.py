"""Cross-fitted proxy predictions of the outcome from covariates."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from state_ate.data import ExperimentFrame
from state_ate.errors import NonFinitePrediction
from state_ate.predictors.basis import BasisRidge
from state_ate.predictors.folds import FoldAssignment, assign_folds
from state_ate.predictors.trees import GradientBoostedTrees, TreeParams


class Family(str, enum.Enum):
    BOOSTED_TREES = "boosted_trees"
    BASIS_RIDGE = "basis_ridge"


class TrainOn(str, enum.Enum):
    POOLED = "pooled"
    CONTROL = "control"


@dataclass(frozen=True)
class PredictorConfig:
    family: Family = Family.BOOSTED_TREES
    k: int = 5
    seed: int = 0
    train_on: TrainOn = TrainOn.POOLED
    standardize: bool = False
    trees: TreeParams = field(default_factory=TreeParams)
    ridge_alpha: float = 1e-6
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "train_on", TrainOn(self.train_on))
        if isinstance(self.trees, dict):
            object.__setattr__(self, "trees", TreeParams(**self.trees))
        if self.k < 2:
            raise ValueError("cross-fitting needs k >= 2")


@dataclass(frozen=True, eq=False)
class ProxyColumn:
    yhat: np.ndarray
    model_tag: str
    folds: FoldAssignment | None = None


def _make_model(config: PredictorConfig, seed):
    if config.family is Family.BOOSTED_TREES:
        return GradientBoostedTrees(config.trees, seed=seed)
    return BasisRidge(alpha=config.ridge_alpha)


def _fit_fold(X, target, train, test, config, fold):
    Xtr, Xte = X[train], X[test]
    if config.standardize:
        mu = Xtr.mean(axis=0)
        sd = Xtr.std(axis=0)
        sd[sd == 0] = 1.0
        Xtr, Xte = (Xtr - mu) / sd, (Xte - mu) / sd
    model = _make_model(config, np.random.SeedSequence([config.seed, fold]))
    return model.fit(Xtr, target[train]).predict(Xte)


def fit_proxy(
    frame: ExperimentFrame,
    config: PredictorConfig | None = None,
    target: np.ndarray | None = None,
) -> ProxyColumn:
    """Out-of-fold predictions of ``target`` (default ``frame.y``).

    Each fold's model is trained on the other folds only, with rows
    ordered by unit id so the result does not depend on frame order.
    """
    config = config or PredictorConfig()
    target = frame.y if target is None else np.asarray(target, dtype=float)
    folds = assign_folds(frame.n, config.k, config.seed, frame.unit_ids)
    ids = frame.unit_ids
    tasks = []
    for k in range(config.k):
        in_fold = folds.fold_of_unit == k
        eligible = ~in_fold
        if config.train_on is TrainOn.CONTROL:
            eligible &= frame.treatment == 0
        train = np.flatnonzero(eligible)
        train = train[np.argsort(ids[train], kind="stable")]
        tasks.append((train, np.flatnonzero(in_fold), k))

    X = frame.covariates
    if config.n_jobs == 1:
        preds = [_fit_fold(X, target, tr, te, config, k) for tr, te, k in tasks]
    else:
        preds = Parallel(n_jobs=config.n_jobs)(
            delayed(_fit_fold)(X, target, tr, te, config, k) for tr, te, k in tasks
        )
    yhat = np.empty(frame.n)
    for (_, test, _), p in zip(tasks, preds):
        yhat[test] = p
    if not np.all(np.isfinite(yhat)):
        raise NonFinitePrediction("proxy model produced non-finite predictions")
    yhat.flags.writeable = False
    tag = f"{config.family.value}/k={config.k}/{config.train_on.value}"
    return ProxyColumn(yhat, tag, folds)


def proxy_for_p(frame: ExperimentFrame, transform, config: PredictorConfig | None = None) -> ProxyColumn:
    """Cross-fitted proxy for the linearised ratio label ``transform.p``."""
    proxy = fit_proxy(frame, config, target=transform.p)
    return ProxyColumn(proxy.yhat, proxy.model_tag + "/target=P", proxy.folds)
