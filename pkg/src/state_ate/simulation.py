"""Synthetic data and Monte Carlo evaluation of ATE estimators.

Covariates are ``X ~ N(u, I_d)`` with ``u ~ U(0, 10)^d`` drawn once per
pool; outcomes follow nonlinear baselines ``b(X)``, ``c(X)`` and
heterogeneous effects ``tau_y(X)``, ``tau_z(X)`` plus Gaussian noise.  A
pool keeps both potential outcomes of every unit, so the harness knows
the true effect of any drawn sample.

Each replication draws ``draw_size`` units without replacement, assigns
``T ~ Bernoulli(p)`` and runs every estimator.  In A/A mode the outcome
ignores ``T`` (truth 0); in A/B mode it switches to the treated
potential outcome and the truth is the sample average effect.
Replication ``r`` uses the ``r``-th spawned child of ``SeedSequence(seed)``,
so results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import traceback
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from state_ate.data import ExperimentFrame, MetricKind
from state_ate.errors import StateAteError
from state_ate.predictors import PredictorConfig, fit_proxy
from state_ate.registry import BASELINE, EstimationContext, get_spec
from state_ate.state_em import EmConfig

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.01


class SimulationAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class DgpConfig:
    d: int = 5
    noise_sd_y: float = 25.0
    noise_sd_z: float = 10.0
    outlier_fraction: float = 0.005
    pool_size: int = 200_000
    draw_size: int = 20_000
    treatment_prob: float = 0.5
    seed: int = 72
    effect_scale: float = 1.0

    def __post_init__(self):
        if self.d < 5:
            raise ValueError("the outcome model uses five covariates; need d >= 5")
        if not 0.0 <= self.outlier_fraction <= 0.05:
            raise ValueError("outlier_fraction must lie in [0, 0.05]")
        if not 0 < self.draw_size <= self.pool_size:
            raise ValueError("need 0 < draw_size <= pool_size")
        if not 0.0 < self.treatment_prob < 1.0:
            raise ValueError("treatment_prob must lie in (0, 1)")

    @classmethod
    def fast(cls, **kw) -> DgpConfig:
        """Small profile for smoke runs: 20k pool, 2k per draw."""
        return cls(**{"pool_size": 20_000, "draw_size": 2_000, **kw})


# outcome model -------------------------------------------------------------

def baseline_y(X: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4, x5 = (X[:, j] for j in range(5))
    return 10 * np.sin(np.pi * x1 * x2) + 6 * x3**2 + 10 * np.abs(x4) + 5 * np.abs(x5) + 50


def baseline_z(X: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4, x5 = (X[:, j] for j in range(5))
    return 10 * np.sin(np.pi * x4) * x5 + 15 * (x2 + x3) ** 2 + 5 * np.abs(x1) + 30


def effect_y(X: np.ndarray) -> np.ndarray:
    return X[:, 0] * X[:, 2] + np.logaddexp(0.0, X[:, 1])


def effect_z(X: np.ndarray) -> np.ndarray:
    return X[:, 1] ** 2 + 3 * np.log(1 + np.exp(X[:, 3]) + np.abs(X[:, 4]))


@dataclass(frozen=True, eq=False)
class Pool:
    covariates: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    z0: np.ndarray
    z1: np.ndarray
    u: np.ndarray
    config: DgpConfig
    outliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return len(self.y0)


def generate_pool(config: DgpConfig) -> Pool:
    """Clean pool (no outliers) with both potential outcomes per unit."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    n, d = config.pool_size, config.d
    u = rng.uniform(0.0, 10.0, d)
    X = rng.normal(u, 1.0, size=(n, d))
    eps = rng.normal(0.0, config.noise_sd_y, n)
    eta = rng.normal(0.0, config.noise_sd_z, n)
    y0 = baseline_y(X) + eps
    z0 = baseline_z(X) + eta
    y1 = y0 + config.effect_scale * effect_y(X)
    z1 = z0 + config.effect_scale * effect_z(X)
    return Pool(X, y0, y1, z0, z1, u, config)


def inject_outliers(pool: Pool, fraction: float | None = None) -> Pool:
    """Replace a random subset of units by upper-tail outliers.

    Selected units get ``Y ~ U(mean + 4 sd, mean + 20 sd)`` and likewise
    for ``Z``, with moments of the clean control outcomes.  Both
    potential outcomes are replaced by the same draw, so outliers do not
    respond to treatment.  The unit order and the uniform draws come
    from a fixed stream: a larger fraction contaminates a superset of the
    units of a smaller one, with the same values.
    """
    fraction = pool.config.outlier_fraction if fraction is None else fraction
    if not 0.0 <= fraction <= 0.05:
        raise ValueError("outlier fraction must lie in [0, 0.05]")
    config = replace(pool.config, outlier_fraction=fraction)
    m = int(round(fraction * pool.size))
    if m == 0:
        return replace(pool, config=config, outliers=np.zeros(0, dtype=np.int64))
    rng = np.random.default_rng(np.random.SeedSequence([pool.config.seed, 1]))
    order = rng.permutation(pool.size)
    uy = rng.uniform(4.0, 20.0, pool.size)
    uz = rng.uniform(4.0, 20.0, pool.size)
    chosen = order[:m]
    my, sy = pool.y0.mean(), pool.y0.std()
    mz, sz = pool.z0.mean(), pool.z0.std()
    y_out = my + uy[chosen] * sy
    z_out = mz + uz[chosen] * sz
    y0, y1, z0, z1 = (a.copy() for a in (pool.y0, pool.y1, pool.z0, pool.z1))
    y0[chosen] = y1[chosen] = y_out
    z0[chosen] = z1[chosen] = z_out
    return Pool(pool.covariates, y0, y1, z0, z1, pool.u, config, np.sort(chosen))


def make_pool(config: DgpConfig) -> Pool:
    return inject_outliers(generate_pool(config), config.outlier_fraction)


# pool-level proxies --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PoolProxies:
    y: np.ndarray
    p: np.ndarray | None = None
    model_tag: str = ""


def fit_pool_proxies(pool: Pool, predictor: PredictorConfig | None = None, ratio: bool = False) -> PoolProxies:
    """Cross-fit proxies once on the whole pool.

    Targets are the control potential outcomes, so each proxy is a fixed
    function of covariates that never saw its own unit's outcome and is
    independent of every replication's treatment draw.  The ratio label
    uses pool-level means for ``kappa1`` and ``kappa2``; the regression's
    free proxy loading absorbs the small gap to per-replication values.
    """
    predictor = predictor or PredictorConfig()
    frame = ExperimentFrame(pool.covariates, np.zeros(pool.size, dtype=np.int8), pool.y0, pool.z0)
    py = fit_proxy(frame, predictor)
    pp = None
    if ratio:
        label = pool.z0.mean() * pool.y0 - pool.y0.mean() * pool.z0
        pp = fit_proxy(frame, predictor, target=label).yhat
    return PoolProxies(py.yhat, pp, py.model_tag)


# Monte Carlo ---------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorSummary:
    name: str
    empirical_coverage: float
    variance: float
    var_reduction_vs_dim: float
    mean_estimate: float
    mean_std_error: float
    mean_truth: float
    replications: int
    failures: int


@dataclass(eq=False)
class SimulationSummary:
    mode: str
    estimators: list[str]
    replications: int
    seed: int
    dgp: DgpConfig
    per_estimator: dict[str, EstimatorSummary]
    estimates: np.ndarray
    std_errors: np.ndarray
    truths: np.ndarray
    covers: np.ndarray
    errors: list[tuple[int, str, str]] = field(default_factory=list)

    def __getitem__(self, name: str) -> EstimatorSummary:
        return self.per_estimator[name]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "replications": self.replications,
            "seed": self.seed,
            "dgp": asdict(self.dgp),
            "estimators": {k: asdict(v) for k, v in self.per_estimator.items()},
            "errors": [list(e) for e in self.errors],
        }

    def to_table(self) -> str:
        """Methods across, ``Emp.Cov%`` and ``Var.Red%`` down."""
        names = self.estimators
        widths = [max(8, len(n) + 2) for n in names]
        head = "Methods".ljust(10) + "".join(n.rjust(w) for n, w in zip(names, widths))
        cov = "Emp.Cov%".ljust(10) + "".join(
            f"{100 * self.per_estimator[n].empirical_coverage:.1f}".rjust(w) for n, w in zip(names, widths))
        red = "Var.Red%".ljust(10) + "".join(
            f"{100 * self.per_estimator[n].var_reduction_vs_dim:.1f}".rjust(w) for n, w in zip(names, widths))
        rule = "-" * len(head)
        return "\n".join([rule, head, rule, cov, red, rule])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rep", "estimator", "estimate", "std_error", "truth", "covers"])
        for r in range(self.replications):
            for j, name in enumerate(self.estimators):
                w.writerow([r, name, repr(float(self.estimates[r, j])), repr(float(self.std_errors[r, j])),
                            repr(float(self.truths[r, j])), int(self.covers[r, j])])
        return buf.getvalue()


def _with_baselines(names) -> list[str]:
    names = list(dict.fromkeys(names))
    kinds = {get_spec(n).metric for n in names}
    missing = [BASELINE[k] for k in (MetricKind.COUNT, MetricKind.RATIO)
               if k in kinds and BASELINE[k] not in names]
    return missing + names


_CAUGHT = (StateAteError, ValueError, ArithmeticError, np.linalg.LinAlgError)


def draw_replication(pool: Pool, seed: int, rep: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit indices and treatment flags of replication ``rep``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))
    cfg = pool.config
    idx = rng.choice(pool.size, cfg.draw_size, replace=False)
    t = (rng.random(cfg.draw_size) < cfg.treatment_prob).astype(np.int8)
    return idx, t


def _one_replication(pool, proxies, names, mode, seed, rep, ctx_kw, proxy_scope):
    idx, t = draw_replication(pool, seed, rep)
    y0, z0 = pool.y0[idx], pool.z0[idx]
    if mode == "ab":
        y1, z1 = pool.y1[idx], pool.z1[idx]
        y = np.where(t == 1, y1, y0)
        z = np.where(t == 1, z1, z0)
        truth = {MetricKind.COUNT: float(np.mean(y1 - y0)),
                 MetricKind.RATIO: float(np.mean(y1) / np.mean(z1) - np.mean(y0) / np.mean(z0))}
    else:
        y, z = y0, z0
        truth = {MetricKind.COUNT: 0.0, MetricKind.RATIO: 0.0}
    frame = ExperimentFrame(pool.covariates[idx], t, y, z, unit_ids=idx)
    kw = dict(ctx_kw)
    if proxy_scope == "pool" and proxies is not None:
        kw["proxy_y_override"] = proxies.y[idx]
        if proxies.p is not None:
            kw["proxy_p_override"] = proxies.p[idx]
    ctx = EstimationContext(frame, **kw)

    k = len(names)
    est = np.full(k, np.nan)
    se = np.full(k, np.nan)
    tr = np.zeros(k)
    cov = np.zeros(k, dtype=bool)
    errors = []
    for j, name in enumerate(names):
        spec = get_spec(name)
        tr[j] = truth[spec.metric]
        try:
            rep_ = spec.run(ctx)
        except _CAUGHT as exc:
            errors.append((rep, name, f"{type(exc).__name__}: {exc}"))
            log.debug("replication %d, %s failed:\n%s", rep, name, traceback.format_exc())
            continue
        est[j], se[j] = rep_.estimate, rep_.std_error
        cov[j] = rep_.covers(tr[j])
    return rep, est, se, tr, cov, errors


def run_monte_carlo(
    pool: Pool,
    estimators,
    mode: str = "aa",
    reps: int = 1000,
    seed: int = 0,
    proxies: PoolProxies | None = None,
    predictor: PredictorConfig | None = None,
    em: EmConfig | None = None,
    proxy_scope: str = "pool",
    n_jobs: int = 1,
    alpha: float = 0.05,
    winsor_percentile: float = 0.999,
    se_method: str = "m_estimator",
) -> SimulationSummary:
    """Replicate draw, assignment and estimation ``reps`` times.

    ``proxy_scope="pool"`` (default) cross-fits proxies once on the pool
    (or takes ``proxies``); ``"replication"`` cross-fits inside every
    replication's sample.  Baseline DIM estimators are added as needed.
    """
    mode = mode.lower()
    if mode not in ("aa", "ab"):
        raise ValueError("mode must be 'aa' or 'ab'")
    if proxy_scope not in ("pool", "replication"):
        raise ValueError("proxy_scope must be 'pool' or 'replication'")
    names = _with_baselines(estimators)
    predictor = predictor or PredictorConfig()
    needs_proxy = any(get_spec(n).needs_proxy for n in names)
    if proxy_scope == "pool" and needs_proxy and proxies is None:
        ratio = any(get_spec(n).needs_proxy and get_spec(n).metric is MetricKind.RATIO for n in names)
        proxies = fit_pool_proxies(pool, predictor, ratio=ratio)
    ctx_kw = dict(predictor=predictor, em=em or EmConfig(), alpha=alpha,
                  winsor_percentile=winsor_percentile, se_method=se_method)

    args = (pool, proxies, names, mode, seed)
    if n_jobs == 1:
        results = [_one_replication(*args, r, ctx_kw, proxy_scope) for r in range(reps)]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_one_replication)(*args, r, ctx_kw, proxy_scope) for r in range(reps))
    return _summarise(results, names, mode, reps, seed, pool.config)


def _summarise(results, names, mode, reps, seed, dgp) -> SimulationSummary:
    k = len(names)
    est = np.full((reps, k), np.nan)
    se = np.full((reps, k), np.nan)
    tr = np.zeros((reps, k))
    cov = np.zeros((reps, k), dtype=bool)
    errors = []
    for rep, e, s, t, c, errs in sorted(results, key=lambda r: r[0]):
        est[rep], se[rep], tr[rep], cov[rep] = e, s, t, c
        errors.extend(errs)

    failures = np.isnan(est).sum(axis=0)
    bad = [n for n, f in zip(names, failures) if f > MAX_FAILURE_RATE * reps]
    if bad:
        sample = "; ".join(e[2] for e in errors[:3])
        raise SimulationAborted(f"more than {MAX_FAILURE_RATE:.0%} of replications failed for {bad}: {sample}")

    variances = {}
    for j, n in enumerate(names):
        ok = ~np.isnan(est[:, j])
        variances[n] = float(np.var(est[ok, j], ddof=1)) if ok.sum() > 1 else math.nan
    per = {}
    for j, n in enumerate(names):
        ok = ~np.isnan(est[:, j])
        base = variances[BASELINE[get_spec(n).metric]]
        per[n] = EstimatorSummary(
            name=n,
            empirical_coverage=float(np.mean(cov[ok, j])),
            variance=variances[n],
            var_reduction_vs_dim=0.0 if n in BASELINE.values() else 1.0 - variances[n] / base,
            mean_estimate=float(np.mean(est[ok, j])),
            mean_std_error=float(np.mean(se[ok, j])),
            mean_truth=float(np.mean(tr[ok, j])),
            replications=int(ok.sum()),
            failures=int(failures[j]),
        )
    return SimulationSummary(mode, names, reps, seed, dgp, per, est, se, tr, cov, errors)


def sweep_outlier_fraction(
    clean_pool: Pool,
    fractions,
    estimators,
    mode: str = "aa",
    reps: int = 500,
    seed: int = 0,
    predictor: PredictorConfig | None = None,
    proxies_by_fraction: dict | None = None,
    **kw,
) -> list[SimulationSummary]:
    """One summary per outlier fraction, sharing the clean pool and per-replication seeds."""
    out = []
    for frac in fractions:
        pool = inject_outliers(clean_pool, frac)
        proxies = None if proxies_by_fraction is None else proxies_by_fraction.get(frac)
        out.append(run_monte_carlo(pool, estimators, mode, reps, seed, proxies=proxies,
                                   predictor=predictor, **kw))
    return out
