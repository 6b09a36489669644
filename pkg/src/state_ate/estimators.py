"""Classical ATE estimators and robustness baselines."""

from __future__ import annotations

import enum
import math

import numpy as np

from state_ate.data import ExperimentFrame, FrameValidationError, Violation
from state_ate.errors import (
    IrlsNonConvergence,
    SingularDesign,
    ZeroDenominator,
    ZeroVarianceCovariate,
)
from state_ate.linalg import ols_hc1, sandwich, solve_wls
from state_ate.report import AteReport, make_report

HUBER_K = 1.345
MAD_TO_SD = 0.6744897501960817


class Flavor(str, enum.Enum):
    CUPAC = "cupac"
    MLRATE = "mlrate"


def _require_groups(frame: ExperimentFrame) -> None:
    if frame.n_t < 2 or frame.n_c < 2:
        raise FrameValidationError([Violation("DegenerateGroup", None, "each group needs >= 2 units")])


def _dim_of(values: np.ndarray, treated: np.ndarray) -> tuple[float, float]:
    a, b = values[treated], values[~treated]
    mt, mc = float(np.mean(a)), float(np.mean(b))
    vt = float(np.sum((a - mt) ** 2)) / (len(a) - 1)
    vc = float(np.sum((b - mc) ** 2)) / (len(b) - 1)
    return mt - mc, math.sqrt(vt / len(a) + vc / len(b))


def dim_count(frame: ExperimentFrame, alpha: float = 0.05, y: np.ndarray | None = None, tag: str = "dim") -> AteReport:
    """Difference in means with the unpooled two-sample variance."""
    _require_groups(frame)
    values = frame.y if y is None else np.asarray(y, dtype=float)
    est, se = _dim_of(values, frame.treated)
    return make_report(est, se, tag, frame.n, alpha)


def dim_ratio(frame: ExperimentFrame, alpha: float = 0.05, tag: str = "ratio_dim") -> AteReport:
    """``sum(Y_t)/sum(Z_t) - sum(Y_c)/sum(Z_c)`` with a delta-method standard error."""
    from state_ate.ratio import delta_var_ratio

    _require_groups(frame)
    if frame.z is None:
        raise ZeroDenominator("ratio metric needs a denominator column")
    t = frame.treated
    zt, zc = np.sum(frame.z[t]), np.sum(frame.z[~t])
    if not (zt > 0 and zc > 0):
        raise ZeroDenominator("denominator sum must be positive in both groups")
    est = np.sum(frame.y[t]) / zt - np.sum(frame.y[~t]) / zc
    return make_report(est, math.sqrt(delta_var_ratio(frame)), tag, frame.n, alpha)


def _covariate_matrix(frame: ExperimentFrame, covariate) -> np.ndarray:
    if covariate is None:
        if frame.covariates.shape[1] == 0:
            raise ZeroVarianceCovariate("frame has no covariates to adjust on")
        return frame.covariates
    cov = np.asarray(covariate, dtype=float)
    if cov.ndim == 1:
        cov = cov[:, None]
    if len(cov) != frame.n:
        raise ValueError("covariate length does not match the frame")
    return cov


def cuped_theta(x: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Pooled adjustment coefficients ``Cov(X)^{-1} Cov(X, target)``."""
    xc = x - x.mean(axis=0)
    if np.any(np.all(xc == 0, axis=0)):
        raise ZeroVarianceCovariate("a CUPED covariate has zero variance")
    try:
        return solve_wls(xc, target - target.mean())
    except SingularDesign as exc:
        raise ZeroVarianceCovariate("CUPED covariates are collinear") from exc


def cuped(frame: ExperimentFrame, covariate=None, alpha: float = 0.05, tag: str = "cuped") -> AteReport:
    """DIM on ``Y - (X - mean X) theta`` with ``theta`` estimated pooled.

    ``covariate`` is a column, an ``(n, k)`` matrix, or ``None`` for all of
    the frame's covariates (multivariate linear adjustment).
    """
    _require_groups(frame)
    x = _covariate_matrix(frame, covariate)
    theta = cuped_theta(x, frame.y)
    adjusted = frame.y - (x - x.mean(axis=0)) @ theta
    est, se = _dim_of(adjusted, frame.treated)
    return make_report(est, se, tag, frame.n, alpha)


def _proxy_values(proxy) -> np.ndarray:
    return np.asarray(getattr(proxy, "yhat", proxy), dtype=float)


def regression_adjusted(
    frame: ExperimentFrame,
    proxy,
    flavor: Flavor | str = Flavor.MLRATE,
    alpha: float = 0.05,
    y: np.ndarray | None = None,
    tag: str | None = None,
) -> AteReport:
    """Adjust with a cross-fitted proxy.

    CUPAC is CUPED with the proxy as covariate.  MLRATE is OLS of ``Y`` on
    ``[1, T, g, T * g]`` with ``g`` the centred proxy and an HC1 standard
    error on the ``T`` coefficient.  A constant proxy carries no
    information and both flavours fall back to the plain difference.
    """
    flavor = Flavor(flavor)
    tag = tag or flavor.value
    _require_groups(frame)
    target = frame.y if y is None else np.asarray(y, dtype=float)
    g = _proxy_values(proxy)
    constant = np.ptp(g) == 0
    gc = np.zeros_like(g) if constant else g - g.mean()
    if flavor is Flavor.CUPAC:
        if constant:
            est, se = _dim_of(target, frame.treated)
        else:
            theta = cuped_theta(gc[:, None], target)
            est, se = _dim_of(target - gc * theta[0], frame.treated)
        return make_report(est, se, tag, frame.n, alpha)

    t = frame.treated.astype(float)
    cols = [np.ones(frame.n), t]
    if not constant:
        cols += [gc, t * gc]
    coef, cov = ols_hc1(np.column_stack(cols), target)
    return make_report(coef[1], math.sqrt(cov[1, 1]), tag, frame.n, alpha)


def winsorize(frame: ExperimentFrame, percentile: float = 0.999, two_sided: bool = False) -> ExperimentFrame:
    """Clip ``y`` (and ``z``) at the pooled empirical ``percentile``.

    Only the upper tail is clipped unless ``two_sided``, in which case
    values below the ``1 - percentile`` quantile are raised to it too.
    """
    if not 0.0 < percentile < 1.0:
        raise ValueError("percentile must lie strictly between 0 and 1")

    def clip(col):
        hi = np.quantile(col, percentile)
        lo = np.quantile(col, 1.0 - percentile) if two_sided else -np.inf
        return np.clip(col, lo, hi)

    return frame.replace(
        y=clip(frame.y),
        z=None if frame.z is None else clip(frame.z),
    )


def _mad_scale(r: np.ndarray) -> float:
    return float(np.median(np.abs(r - np.median(r)))) / MAD_TO_SD


def huber_regression(
    frame: ExperimentFrame,
    proxy,
    delta: float = HUBER_K,
    alpha: float = 0.05,
    max_iter: int = 200,
    tol: float = 1e-8,
    tag: str = "huber",
) -> AteReport:
    """Huber M-regression of ``Y`` on ``[1, T, proxy]`` via IRLS.

    ``delta`` is the threshold in units of the residual scale, which is
    re-estimated by the MAD at every iteration.  The standard error is the
    M-estimator sandwich ``s^2 A^{-1} B A^{-1}`` with
    ``A = sum psi'(u) x x'`` and ``B = sum psi(u)^2 x x'``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    _require_groups(frame)
    y = frame.y
    X = np.column_stack([np.ones(frame.n), frame.treated.astype(float), _proxy_values(proxy)])
    coef = solve_wls(X, y)
    w = np.ones(frame.n)
    for _ in range(max_iter):
        r = y - X @ coef
        s = _mad_scale(r)
        if s == 0:
            s = float(np.mean(np.abs(r))) / 0.7978845608028654
        if s == 0:
            break
        u = np.abs(r) / s
        w_new = np.minimum(1.0, delta / np.maximum(u, 1e-300))
        coef = solve_wls(X, y, w_new)
        change = float(np.max(np.abs(w_new - w)))
        w = w_new
        if change < tol:
            break
    else:
        raise IrlsNonConvergence(f"weights still moving by {change:.2e} after {max_iter} iterations")

    r = y - X @ coef
    s = _mad_scale(r) or float(np.mean(np.abs(r))) / 0.7978845608028654
    if s == 0:
        return make_report(coef[1], 0.0, tag, frame.n, alpha)
    u = r / s
    psi = np.clip(u, -delta, delta)
    dpsi = (np.abs(u) <= delta).astype(float)
    cov = s * s * sandwich(X, dpsi, psi)
    return make_report(coef[1], math.sqrt(max(cov[1, 1], 0.0)), tag, frame.n, alpha)


def ratio_cuped_delta(frame: ExperimentFrame, covariate=None, alpha: float = 0.05, tag: str = "ratio_cuped_delta") -> AteReport:
    """CUPED for ratio metrics through the delta-method linearisation.

    Within each group the ratio is linearised as
    ``L_i = (Y_i - R_g Z_i) / mean(Z_g)``; ``theta`` comes from the pooled
    regression of ``L`` on the covariates and the ratio difference is
    corrected by ``theta'(mean X_t - mean X_c)``.
    """
    _require_groups(frame)
    if frame.z is None:
        raise ZeroDenominator("ratio metric needs a denominator column")
    t = frame.treated
    lin = np.empty(frame.n)
    ratios = []
    for mask in (t, ~t):
        yg, zg = frame.y[mask], frame.z[mask]
        mz = float(np.mean(zg))
        if not mz > 0:
            raise ZeroDenominator("denominator mean must be positive in both groups")
        rg = float(np.sum(yg) / np.sum(zg))
        ratios.append(rg)
        lin[mask] = (yg - rg * zg) / mz
    x = _covariate_matrix(frame, covariate)
    theta = cuped_theta(x, lin)
    est = (ratios[0] - ratios[1]) - (x[t].mean(axis=0) - x[~t].mean(axis=0)) @ theta
    _, se = _dim_of(lin - (x - x.mean(axis=0)) @ theta, t)
    return make_report(est, se, tag, frame.n, alpha)
