"""A/A ratio-metric study on the same protocol as the count-metric table."""

from _common import Timer, dgp, parser, save

from state_ate.simulation import make_pool, run_monte_carlo

ESTIMATORS = ["ratio_dim", "ratio_cuped_delta", "ratio_transformed_dim", "ratio_state"]


def main():
    args = parser(__doc__).parse_args()
    pool = make_pool(dgp(args, 0.005))
    with Timer() as t:
        summary = run_monte_carlo(pool, ESTIMATORS, "aa", args.reps, args.seed, n_jobs=args.n_jobs)
    print(summary.to_table())
    for n in ESTIMATORS:
        s = summary[n]
        print(f"{n:<22} mean={s.mean_estimate:+.3e} sd={s.variance ** 0.5:.3e} mean_se={s.mean_std_error:.3e}")
    print(f"{args.reps} replications in {t.elapsed:.0f}s")
    save(args, "table2", summary)


if __name__ == "__main__":
    main()
