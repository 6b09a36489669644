"""Digamma and trigamma for positive real arguments.

Both use the Bernoulli asymptotic expansion at ``x >= 10`` and the
recurrences ``psi(x) = psi(x + 1) - 1/x`` and
``psi'(x) = psi'(x + 1) + 1/x**2`` to reach that region from below.
Accuracy is better than 1e-13 relative for ``x >= 0.25``.
"""

from __future__ import annotations

import math

import numpy as np

_ASYMPTOTIC_FROM = 10.0

# B_{2k} / (2k) for k = 1..7
_DIGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_{2k} for k = 1..7
_TRIGAMMA_COEF = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _series(inv_x2, coef):
    acc = 0.0
    for c in reversed(coef):
        acc = acc * inv_x2 + c
    return acc


def _check_domain(x):
    if np.any(~(x > 0)):
        raise ValueError("argument must be positive and finite")


def _shift(x):
    """Return (x shifted into the asymptotic region, number of unit steps)."""
    steps = np.maximum(np.ceil(_ASYMPTOTIC_FROM - x), 0.0)
    return x + steps, steps.astype(int)


def _scalar_parts(x: float):
    """Shift a positive float into the asymptotic region.

    Returns ``(xs, s1, s2)`` with ``s1 = sum 1/(x+j)`` and
    ``s2 = sum 1/(x+j)^2`` over the skipped steps.
    """
    if not x > 0 or x == math.inf:
        raise ValueError("argument must be positive and finite")
    steps = max(int(math.ceil(_ASYMPTOTIC_FROM - x)), 0)
    s1 = s2 = 0.0
    for j in range(steps - 1, -1, -1):
        u = 1.0 / (x + j)
        s1 += u
        s2 += u * u
    return x + steps, s1, s2


def _lmd_scalar(x: float) -> float:
    xs, s1, _ = _scalar_parts(x)
    inv = 1.0 / xs
    return 0.5 * inv + inv * inv * _series(inv * inv, _DIGAMMA_COEF) + s1 - math.log(xs / x)


def _trigamma_scalar(x: float) -> float:
    xs, _, s2 = _scalar_parts(x)
    inv = 1.0 / xs
    inv2 = inv * inv
    return inv + 0.5 * inv2 + inv2 * inv * _series(inv2, _TRIGAMMA_COEF) + s2


def log_minus_digamma(x):
    """``ln(x) - psi(x)`` without cancellation for large ``x``."""
    if isinstance(x, (float, int)):
        return _lmd_scalar(float(x))
    arr = np.asarray(x, dtype=float)
    _check_domain(arr)
    xs, steps = _shift(arr)
    inv = 1.0 / xs
    out = 0.5 * inv + inv * inv * _series(inv * inv, _DIGAMMA_COEF)
    # psi(x) = psi(xs) - sum_{j<steps} 1/(x+j); ln(x) = ln(xs) - ln(xs/x)
    out = out + _recurrence_sum(arr, steps, power=1) - np.log(xs / arr)
    return out if np.ndim(x) else float(out)


def digamma(x):
    """Digamma function ``psi(x) = d/dx ln Gamma(x)`` for ``x > 0``."""
    arr = np.asarray(x, dtype=float)
    _check_domain(arr)
    xs, steps = _shift(arr)
    inv = 1.0 / xs
    out = np.log(xs) - 0.5 * inv - inv * inv * _series(inv * inv, _DIGAMMA_COEF)
    out = out - _recurrence_sum(arr, steps, power=1)
    return out if np.ndim(x) else float(out)


def trigamma(x):
    """Trigamma function ``psi'(x)`` for ``x > 0``."""
    if isinstance(x, (float, int)):
        return _trigamma_scalar(float(x))
    arr = np.asarray(x, dtype=float)
    _check_domain(arr)
    xs, steps = _shift(arr)
    inv = 1.0 / xs
    inv2 = inv * inv
    out = inv + 0.5 * inv2 + inv2 * inv * _series(inv2, _TRIGAMMA_COEF)
    out = out + _recurrence_sum(arr, steps, power=2)
    return out if np.ndim(x) else float(out)


def _recurrence_sum(x, steps, power):
    """sum_{j=0}^{steps-1} (x + j)**(-power), elementwise; summed smallest term first."""
    total = np.zeros_like(x, dtype=float)
    max_steps = int(steps.max()) if steps.size else 0
    for j in range(max_steps - 1, -1, -1):
        active = steps > j
        total = total + np.where(active, (x + j) ** -power, 0.0)
    return total


def gammaln(x: float) -> float:
    return math.lgamma(x)
