"""Variance reduction against the share of outliers, with common random numbers."""

from _common import Timer, dgp, parser, save

from state_ate.simulation import generate_pool, sweep_outlier_fraction

FRACTIONS = [0.0, 0.0025, 0.005, 0.01]
ESTIMATORS = ["dim", "cupac", "mlrate", "state"]


def main():
    p = parser(__doc__)
    p.set_defaults(reps=500)
    args = p.parse_args()
    clean = generate_pool(dgp(args, 0.0))
    with Timer() as t:
        summaries = sweep_outlier_fraction(clean, FRACTIONS, ESTIMATORS, "aa", args.reps, args.seed,
                                           n_jobs=args.n_jobs)
    print(f"{'fraction':>9}" + "".join(f"{n:>10}" for n in ESTIMATORS[1:]) + f"{'var(STATE)/var(DIM)':>22}")
    for f, s in zip(FRACTIONS, summaries):
        vr = "".join(f"{100 * s[n].var_reduction_vs_dim:>10.1f}" for n in ESTIMATORS[1:])
        print(f"{f:>9.4f}{vr}{s['state'].variance / s['dim'].variance:>22.4f}")
        save(args, f"sweep_{f:g}", s)
    print(f"sweep finished in {t.elapsed:.0f}s")


if __name__ == "__main__":
    main()
