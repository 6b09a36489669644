"""Ridge regression on a fixed nonlinear basis expansion."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from state_ate.errors import SingularFit


def expand_basis(X: np.ndarray) -> np.ndarray:
    """``[x, x_i * x_j (i < j), |x|, sin(pi x)]`` column blocks."""
    X = np.asarray(X, dtype=float)
    pairs = [X[:, i] * X[:, j] for i, j in combinations(range(X.shape[1]), 2)]
    blocks = [X]
    if pairs:
        blocks.append(np.column_stack(pairs))
    blocks += [np.abs(X), np.sin(np.pi * X)]
    return np.hstack(blocks)


class BasisRidge:
    """Ridge on standardised basis columns with an unpenalised intercept.

    ``alpha`` is the penalty per unit: the objective is
    ``||y - b0 - Z b||^2 + alpha * n * ||b||^2``.  With ``alpha == 0``
    a rank-deficient basis raises :class:`SingularFit`.
    """

    def __init__(self, alpha: float = 1e-6):
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.alpha = alpha

    def fit(self, X: np.ndarray, y: np.ndarray) -> BasisRidge:
        F = expand_basis(X)
        self.mean_ = F.mean(axis=0)
        sd = F.std(axis=0)
        self.keep_ = sd > 1e-12 * np.maximum(1.0, np.abs(self.mean_))
        self.sd_ = np.where(self.keep_, sd, 1.0)
        Z = ((F - self.mean_) / self.sd_)[:, self.keep_]
        y = np.asarray(y, dtype=float)
        self.intercept_ = float(np.mean(y))
        yc = y - self.intercept_
        n, p = Z.shape
        if p == 0:
            self.coef_ = np.zeros(0)
            return self
        if self.alpha == 0:
            coef, _, rank, sv = np.linalg.lstsq(Z, yc, rcond=None)
            if rank < p or sv[-1] <= 1e-10 * sv[0]:
                raise SingularFit(f"basis is collinear (rank {rank} of {p}) and alpha is 0")
        else:
            G = Z.T @ Z + self.alpha * n * np.eye(p)
            coef = np.linalg.solve(G, Z.T @ yc)
        self.coef_ = coef
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = ((expand_basis(X) - self.mean_) / self.sd_)[:, self.keep_]
        return self.intercept_ + Z @ self.coef_
