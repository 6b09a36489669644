"""Pick the covariate-mean seed by a rule fixed before any Monte Carlo run.

The mean vector ``u`` of the covariates is drawn once per pool and sets how
much of the outcome variance is linear in the covariates.  This script
scans candidate seeds and ranks them by how close the pool-level linear
R^2 of ``Y`` on ``X`` (the large-sample CUPED variance reduction) is to a
target level; no estimator other than OLS is run.
"""

import argparse

import numpy as np

from state_ate.simulation import DgpConfig, make_pool


def linear_r2(pool) -> float:
    A = np.column_stack([np.ones(pool.size), pool.covariates])
    coef, *_ = np.linalg.lstsq(A, pool.y0, rcond=None)
    return 1.0 - np.var(pool.y0 - A @ coef) / np.var(pool.y0)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--target", type=float, default=0.287)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--show", type=int, default=5)
    args = p.parse_args()
    rows = []
    for seed in range(args.seeds):
        pool = make_pool(DgpConfig(seed=seed))
        rows.append((abs(linear_r2(pool) - args.target), seed, linear_r2(pool), pool.u))
    rows.sort(key=lambda r: r[0])
    for gap, seed, r2, u in rows[: args.show]:
        print(f"seed {seed:3d}  linear R^2 {r2:.4f}  |gap| {gap:.4f}  u = {np.round(u, 2).tolist()}")
    share = np.mean([0.15 <= r[2] <= 0.45 for r in rows])
    print(f"{100 * share:.0f}% of the {args.seeds} seeds put the linear R^2 in [0.15, 0.45]")


if __name__ == "__main__":
    main()
