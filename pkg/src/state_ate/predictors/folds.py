from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from state_ate.errors import TooFewUnits


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of_unit: np.ndarray
    k: int

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of_unit, minlength=self.k)

    def members(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_unit == fold)


def assign_folds(n: int, k: int, seed: int, unit_ids: np.ndarray | None = None) -> FoldAssignment:
    """Balanced random partition of ``n`` units into ``k`` folds.

    The assignment is keyed on ``unit_ids`` (default: positions), so a
    reordered frame with the same ids gets the same fold per unit.
    Treatment labels are never consulted.
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < 2 * k:
        raise TooFewUnits(f"{n} units cannot fill {k} folds with 2 units each")
    canonical = np.arange(n) if unit_ids is None else np.argsort(np.asarray(unit_ids), kind="stable")
    perm = np.random.default_rng(seed).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    fold[canonical[perm]] = np.arange(n) % k
    return FoldAssignment(fold, k)
