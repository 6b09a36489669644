"""Least-squares and sandwich-covariance helpers."""

from __future__ import annotations

import numpy as np

from state_ate.errors import SingularDesign

RANK_TOL = 1e-10


def solve_wls(design: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted least squares via SVD on the column-scaled, sqrt-weighted design.

    Raises SingularDesign when the scaled design is numerically rank deficient.
    """
    X = np.asarray(design, dtype=float)
    if weights is not None:
        sw = np.sqrt(weights)
        X = X * sw[:, None]
        y = y * sw
    scale = np.max(np.abs(X), axis=0)
    if np.any(scale == 0) or not np.all(np.isfinite(scale)):
        raise SingularDesign("design has an all-zero or non-finite column")
    coef, _, rank, sv = np.linalg.lstsq(X / scale, y, rcond=None)
    if rank < X.shape[1] or sv[-1] <= RANK_TOL * sv[0]:
        raise SingularDesign(f"design is rank deficient (rank {rank} of {X.shape[1]})")
    return coef / scale


def sandwich(design: np.ndarray, bread_w: np.ndarray, score: np.ndarray, dof_correction: bool = True) -> np.ndarray:
    """``A^{-1} B A^{-1}`` with ``A = X' diag(bread_w) X`` and ``B = X' diag(score^2) X``.

    ``dof_correction`` applies the HC1 factor ``n / (n - p)``.
    """
    X = np.asarray(design, dtype=float)
    n, p = X.shape
    A = X.T @ (X * bread_w[:, None])
    Xs = X * score[:, None]
    B = Xs.T @ Xs
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign("sandwich bread is singular") from exc
    cov = A_inv @ B @ A_inv
    if dof_correction:
        cov *= n / (n - p)
    return cov


def ols_hc1(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """OLS coefficients and their HC1 heteroskedasticity-robust covariance."""
    coef = solve_wls(design, y)
    resid = y - design @ coef
    return coef, sandwich(design, np.ones(len(y)), resid)
