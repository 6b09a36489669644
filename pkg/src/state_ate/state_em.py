"""Regression adjustment with Student's-t residuals, fitted by variational EM.

The model is ``y_i = a0 + a1 * T_i + a2 * yhat_i + e_i`` with
``e_i ~ t(0, sigma2, v)`` written as a Gaussian scale mixture:
``e_i | eta_i ~ N(0, sigma2 / eta_i)`` and ``eta_i ~ Gamma(v/2, v/2)``.
The posterior over each ``eta_i`` is ``Gamma(xi_i, zeta_i)`` and the
treatment coefficient ``a1`` is the robust ATE estimate.

The step functions work on a response vector ``y`` and an ``(n, 3)``
design ``[1, T, yhat]``; :func:`fit_state` and :func:`state_estimate`
accept an :class:`ExperimentFrame` plus proxy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from state_ate.data import ExperimentFrame
from state_ate.errors import NonFiniteEnergy, ScaleUnderflow, SingularDesign
from state_ate.linalg import RANK_TOL, sandwich
from state_ate.report import AteReport, make_report
from state_ate.special import digamma, log_minus_digamma, trigamma

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 500
    tol: float = 1e-8
    v_init: float = 4.0
    v_bounds: tuple[float, float] = (0.5, 1e6)
    fix_v: float | None = None
    sigma2_floor: float = 1e-12

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        lo, hi = self.v_bounds
        if not 0 < lo < hi:
            raise ValueError("v_bounds must satisfy 0 < v_min < v_max")
        if self.fix_v is not None and not self.fix_v > 0:
            raise ValueError("fix_v must be positive")


@dataclass(eq=False)
class TRegressionFit:
    a: np.ndarray
    sigma2: float
    v: float
    weights: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    free_energy_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    dof_clamped: bool = False

    @property
    def ate(self) -> float:
        return float(self.a[1])

    @property
    def log_weights(self) -> np.ndarray:
        """Posterior expectations ``<ln eta_i>``."""
        return expected_log_eta(self.xi, self.zeta)


def state_design(frame: ExperimentFrame, proxy) -> np.ndarray:
    yhat = getattr(proxy, "yhat", proxy)
    t = np.asarray(frame.treatment, dtype=float)
    return np.column_stack([np.ones(frame.n), t, np.asarray(yhat, dtype=float)])


def expected_log_eta(xi, zeta):
    return digamma(xi) - np.log(zeta)


# E-step --------------------------------------------------------------------

def e_step(y: np.ndarray, design: np.ndarray, a: np.ndarray, sigma2: float, v: float):
    """Optimal Gamma posterior for each precision multiplier.

    Returns ``(xi, zeta, weights)`` with ``xi = v/2 + 1/2``,
    ``zeta = v/2 + r^2 / (2 sigma2)`` and ``weights = xi / zeta``.
    """
    r = y - design @ a
    xi = np.full(len(y), 0.5 * v + 0.5)
    zeta = 0.5 * v + r * r / (2.0 * sigma2)
    return xi, zeta, xi / zeta


# free energy ---------------------------------------------------------------

def free_energy_terms(y, design, a, sigma2, v, xi, zeta) -> np.ndarray:
    """Per-unit contributions to the variational lower bound."""
    r = y - design @ a
    w = xi / zeta
    lw = expected_log_eta(xi, zeta)
    half_v = 0.5 * v
    log_lik = -0.5 * (_LOG_2PI + math.log(sigma2)) + 0.5 * lw - w * r * r / (2.0 * sigma2)
    log_prior = half_v * math.log(half_v) - math.lgamma(half_v) + (half_v - 1.0) * lw - half_v * w
    lgamma_xi = np.vectorize(math.lgamma, otypes=[float])(xi) if np.ndim(xi) else math.lgamma(xi)
    log_q = xi * np.log(zeta) - lgamma_xi + (xi - 1.0) * lw - xi
    return log_lik + log_prior - log_q


def free_energy(y, design, a, sigma2, v, xi, zeta) -> float:
    xi_arr = np.asarray(xi, dtype=float)
    if xi_arr.ndim and np.all(xi_arr == xi_arr.flat[0]):
        # xi is shared by every unit after an exact E-step
        xi = float(xi_arr.flat[0])
    value = float(np.sum(free_energy_terms(y, design, a, sigma2, v, xi, zeta)))
    if not math.isfinite(value):
        raise NonFiniteEnergy(f"free energy is {value} (sigma2={sigma2}, v={v})")
    return value


def _free_energy_from_sums(n, sigma2, v, xi, s_logz, s_w, s_wr2) -> float:
    """:func:`free_energy` for a shared ``xi`` from three per-unit sums.

    ``s_logz = sum ln zeta``, ``s_w = sum <eta>`` and
    ``s_wr2 = sum <eta> r^2`` with ``r`` the residuals under ``a``.
    """
    h = 0.5 * v
    s_lw = n * digamma(xi) - s_logz
    value = (
        -0.5 * n * (_LOG_2PI + math.log(sigma2)) - s_wr2 / (2.0 * sigma2)
        + n * (h * math.log(h) - math.lgamma(h) + math.lgamma(xi) + xi)
        + (h - xi + 0.5) * s_lw - h * s_w - xi * s_logz
    )
    if not math.isfinite(value):
        raise NonFiniteEnergy(f"free energy is {value} (sigma2={sigma2}, v={v})")
    return value


def t_log_likelihood(y, design, a, sigma2, v) -> float:
    """Exact log-likelihood ``sum_i ln St(y_i | a'x_i, sigma2, v)``."""
    r = y - design @ a
    const = math.lgamma(0.5 * (v + 1)) - math.lgamma(0.5 * v) - 0.5 * math.log(v * math.pi * sigma2)
    return float(np.sum(const - 0.5 * (v + 1) * np.log1p(r * r / (v * sigma2))))


# M-step --------------------------------------------------------------------

def m_step_coeffs(y: np.ndarray, design: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Joint solution of the weighted normal equations for ``(a0, a1, a2)``.

    Proxy-like columns are centred at their weighted mean before solving,
    which keeps the 3x3 system well conditioned; the intercept is mapped
    back afterwards.
    """
    dt = np.ascontiguousarray(np.asarray(design, dtype=float).T)
    return _coeffs_t(np.asarray(y, dtype=float), dt, np.asarray(weights, dtype=float))


def _coeffs_t(y: np.ndarray, dt: np.ndarray, w: np.ndarray) -> np.ndarray:
    # dt is the transposed (k, n) design, contiguous so every pass streams
    sw = np.sum(w)
    centre = (dt @ w) / sw
    centre[0] = 0.0
    xc = dt - centre[:, None]
    xw = xc * w
    G = xw @ xc.T
    rhs = xw @ y
    d = np.sqrt(np.diag(G))
    if np.any(d == 0) or not np.all(np.isfinite(d)):
        raise SingularDesign("a regressor has zero weighted variance")
    Gs = G / np.outer(d, d)
    eig = np.linalg.eigvalsh(Gs)
    if eig[0] <= RANK_TOL * eig[-1]:
        raise SingularDesign("weighted design is numerically singular")
    coef = np.linalg.solve(Gs, rhs / d) / d
    coef[0] -= centre[1:] @ coef[1:]
    return coef


def m_step_scale(y, design, weights, a, floor: float = 0.0) -> float:
    r = y - design @ a
    s2 = float(np.sum(r * r * weights) / len(y))
    if not s2 > floor:
        raise ScaleUnderflow(f"sigma2={s2:.3e} hit the floor {floor:.3e}; the model fits exactly")
    return s2


def dof_equation(v: float, weights, log_weights) -> float:
    """Per-unit mean of the stationarity condition for ``v``."""
    c = float(np.mean(1.0 + np.asarray(log_weights) - np.asarray(weights)))
    return log_minus_digamma(0.5 * v) + c


def m_step_dof(weights, log_weights, v_bounds=(0.5, 1e6)) -> tuple[float, bool]:
    """Root in ``v`` of ``ln(v/2) + 1 + mean(<ln eta> - <eta>) - psi(v/2) = 0``.

    With ``h = ln - psi`` the condition is ``h(v/2) + c = 0`` where
    ``c = mean(1 + <ln eta> - <eta>) <= 0``; ``h`` falls strictly from
    ``+inf`` to 0, so there is at most one root, and the free energy is
    maximised there.  Returns ``(v, clamped)``: with no root inside
    ``v_bounds`` the maximising bound is returned and ``clamped`` is True.
    """
    c = float(np.mean(1.0 + np.asarray(log_weights) - np.asarray(weights)))
    return _solve_dof(c, v_bounds)


def _solve_dof(c: float, v_bounds) -> tuple[float, bool]:
    lo, hi = map(float, v_bounds)

    def f(v):
        return log_minus_digamma(0.5 * v) + c

    if f(hi) >= 0:
        return hi, True
    if f(lo) <= 0:
        return lo, True

    # h(v/2) is close to 1/v over the whole range, so Newton in w = 1/v
    # is nearly linear; the bracket [1/hi, 1/lo] keeps every step safe
    w_lo, w_hi = 1.0 / hi, 1.0 / lo
    w = min(max(-c, w_lo), w_hi)
    for _ in range(100):
        v = 1.0 / w
        fv = f(v)
        if fv == 0.0:
            break
        # f rises with w: f > 0 means v too small, i.e. w too large
        if fv > 0:
            w_hi = w
        else:
            w_lo = w
        slope = 0.5 * v * v * trigamma(0.5 * v) - v
        w_new = w - fv / slope if slope > 0 else math.nan
        if not (w_lo < w_new < w_hi):
            w_new = 0.5 * (w_lo + w_hi)
        if abs(w_new - w) <= 1e-15 * w:
            w = w_new
            break
        w = w_new
    return 1.0 / w, False


# driver --------------------------------------------------------------------

def _check_design(design: np.ndarray) -> None:
    t = design[:, 1]
    if np.all(t == t[0]):
        raise SingularDesign("all units share one treatment value")


class _BlockedSweep:
    """EM passes over the data in cache-sized blocks.

    The design is stored transposed and shifted by its column means, so
    uncentred weighted moments stay well conditioned; each pass touches
    one block at a time and the cost per unit does not depend on ``n``.
    """

    BLOCK = 8192

    def __init__(self, y: np.ndarray, design: np.ndarray):
        self.y = y
        self.n = len(y)
        self.shift = design.mean(axis=0)
        self.shift[0] = 0.0
        self.xt = np.ascontiguousarray((design - self.shift).T)
        self.blocks = [slice(i, min(i + self.BLOCK, self.n)) for i in range(0, self.n, self.BLOCK)]
        # reused between sweeps; callers copy anything they keep
        self.r = np.empty(self.n)
        self.w = np.empty(self.n)
        self.zeta = np.empty(self.n)
        self.logz = np.empty(self.n)

    def e_step(self, r, sigma2, v, keep=False):
        """``(sum ln zeta, sum w, weights, zeta, ln zeta)``; the last two only if ``keep``.

        The arrays are internal buffers, overwritten by the next call.
        """
        xi, half = 0.5 * v + 0.5, 0.5 * v
        w = self.w
        zeta = self.zeta if keep else None
        logz = self.logz if keep else None
        s_logz = s_w = 0.0
        for b in self.blocks:
            rb = r[b]
            zb = half + rb * rb / (2.0 * sigma2)
            wb = xi / zb
            w[b] = wb
            lz = np.log(zb)
            s_logz += float(np.sum(lz))
            s_w += float(np.sum(wb))
            if keep:
                zeta[b], logz[b] = zb, lz
        return s_logz, s_w, w, zeta, logz

    def solve(self, w):
        """Weighted least squares coefficients, their residuals and ``sum w r^2``."""
        k = self.xt.shape[0]
        G = np.zeros((k, k))
        rhs = np.zeros(k)
        for b in self.blocks:
            xw = self.xt[:, b] * w[b]
            G += xw @ self.xt[:, b].T
            rhs += xw @ self.y[b]
        d = np.sqrt(np.diag(G))
        if np.any(d == 0) or not np.all(np.isfinite(d)):
            raise SingularDesign("a regressor has zero weighted variance")
        Gs = G / np.outer(d, d)
        eig = np.linalg.eigvalsh(Gs)
        if eig[0] <= RANK_TOL * eig[-1]:
            raise SingularDesign("weighted design is numerically singular")
        coef = np.linalg.solve(Gs, rhs / d) / d
        r = self.r
        s_wr2 = 0.0
        for b in self.blocks:
            rb = self.y[b] - coef @ self.xt[:, b]
            r[b] = rb
            s_wr2 += float(w[b] @ (rb * rb))
        a = coef.copy()
        a[0] -= self.shift[1:] @ coef[1:]
        return a, r, s_wr2


class EmIteration(NamedTuple):
    """Inputs and outputs of one EM sweep, handed to ``on_iteration``."""

    iteration: int
    xi: np.ndarray
    zeta: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    a: np.ndarray
    sigma2: float
    v: float
    free_energy: float


def fit_t_regression(
    y: np.ndarray,
    design: np.ndarray,
    config: EmConfig | None = None,
    on_iteration: Callable[[EmIteration], None] | None = None,
) -> TRegressionFit:
    """Variational EM for linear regression with Student's-t errors.

    ``on_iteration`` is called after every sweep with the E-step
    quantities the M-step used and the parameters it produced.
    """
    config = config or EmConfig()
    y = np.asarray(y, dtype=float)
    design = np.asarray(design, dtype=float)
    _check_design(design)
    var_y = float(np.var(y))
    floor = config.sigma2_floor * var_y if var_y > 0 else config.sigma2_floor

    n = len(y)
    sweep = _BlockedSweep(y, design)
    a, r, s_wr2 = sweep.solve(np.ones(n))
    sigma2 = s_wr2 / n
    if not sigma2 > floor:
        raise ScaleUnderflow(f"sigma2={sigma2:.3e} hit the floor {floor:.3e}; the model fits exactly")
    v = config.fix_v if config.fix_v is not None else config.v_init
    lo, hi = config.v_bounds
    keep = on_iteration is not None

    trace: list[float] = []
    converged = False
    clamped = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        xi = 0.5 * v + 0.5
        s_logz, s_w, w, zeta, logz = sweep.e_step(r, sigma2, v, keep)
        a, r, s_wr2 = sweep.solve(w)
        sigma2 = s_wr2 / n
        if not sigma2 > floor:
            raise ScaleUnderflow(f"sigma2={sigma2:.3e} hit the floor {floor:.3e}; the model fits exactly")
        if config.fix_v is None:
            c = 1.0 + digamma(xi) - (s_logz + s_w) / n
            v, clamped = _solve_dof(c, (lo, hi))
        trace.append(_free_energy_from_sums(n, sigma2, v, xi, s_logz, s_w, s_wr2))
        if keep:
            on_iteration(EmIteration(iterations, np.full(n, xi), zeta.copy(), w.copy(),
                                     digamma(xi) - logz, a, sigma2, float(v), trace[-1]))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= config.tol * abs(trace[-1]):
            converged = True
            break

    # refresh q for the final parameters so weights, xi, zeta match theta
    xi = 0.5 * v + 0.5
    s_logz, s_w, w, zeta, _ = sweep.e_step(r, sigma2, v, keep=True)
    trace.append(_free_energy_from_sums(n, sigma2, v, xi, s_logz, s_w, float(w @ (r * r))))
    w, zeta = w.copy(), zeta.copy()
    xi = np.full(n, xi)
    return TRegressionFit(
        a=a, sigma2=sigma2, v=float(v), weights=w, xi=xi, zeta=zeta,
        free_energy_trace=trace, iterations=iterations, converged=converged,
        dof_clamped=clamped,
    )


def fit_state(frame: ExperimentFrame, proxy, config: EmConfig | None = None, y: np.ndarray | None = None) -> TRegressionFit:
    """Fit the t-regression of ``y`` (default ``frame.y``) on ``[1, T, proxy]``."""
    target = frame.y if y is None else np.asarray(y, dtype=float)
    return fit_t_regression(target, state_design(frame, proxy), config)


# inference -----------------------------------------------------------------

def t_regression_cov(fit: TRegressionFit, y, design, method: str = "m_estimator") -> np.ndarray:
    """Sandwich covariance of the coefficient vector.

    ``"m_estimator"`` differentiates the t score ``psi(r) = w(r) r`` so the
    bread reflects how each weight reacts to its own residual;
    ``"fixed_weights"`` treats the final weights as known constants
    (an HC1 sandwich on the weight-rescaled regression).
    """
    r = np.asarray(y, dtype=float) - design @ fit.a
    if method == "fixed_weights":
        w = fit.weights
        return sandwich(design, w, w * r)
    if method != "m_estimator":
        raise ValueError(f"unknown standard-error method {method!r}")
    v = fit.v
    u2 = r * r / fit.sigma2
    w = (v + 1.0) / (v + u2)
    dpsi = (v + 1.0) * (v - u2) / (v + u2) ** 2
    return sandwich(design, dpsi, w * r)


def state_std_error(fit: TRegressionFit, y, design, method: str = "m_estimator") -> float:
    cov = t_regression_cov(fit, y, design, method)
    if not cov[1, 1] >= 0:
        raise SingularDesign("negative variance from sandwich; the bread is indefinite")
    return math.sqrt(cov[1, 1])


def state_estimate(
    frame: ExperimentFrame,
    proxy,
    config: EmConfig | None = None,
    alpha: float = 0.05,
    se_method: str = "m_estimator",
    y: np.ndarray | None = None,
    tag: str = "state",
) -> AteReport:
    target = frame.y if y is None else np.asarray(y, dtype=float)
    design = state_design(frame, proxy)
    fit = fit_t_regression(target, design, config)
    se = state_std_error(fit, target, design, se_method)
    return make_report(fit.ate, se, tag, frame.n, alpha)
