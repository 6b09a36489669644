"""A/A count-metric study: 0.5% outliers, 20k of 200k units per replication."""

from _common import Timer, dgp, parser, save

from state_ate.simulation import make_pool, run_monte_carlo

ESTIMATORS = ["dim", "cuped", "cupac", "mlrate", "state"]


def main():
    p = parser(__doc__)
    p.add_argument("--extra", action="store_true", help="also run winsorized and Huber baselines")
    args = p.parse_args()
    names = ESTIMATORS + (["winsorized_dim", "winsorized_mlrate", "huber"] if args.extra else [])
    pool = make_pool(dgp(args, 0.005))
    print(f"pool u = {pool.u.round(3).tolist()}, outliers = {len(pool.outliers)}")
    with Timer() as t:
        summary = run_monte_carlo(pool, names, "aa", args.reps, args.seed, n_jobs=args.n_jobs)
    print(summary.to_table())
    for n in names:
        s = summary[n]
        print(f"{n:<20} mean={s.mean_estimate:+.4f} sd={s.variance ** 0.5:.4f} mean_se={s.mean_std_error:.4f}")
    print(f"{args.reps} replications in {t.elapsed:.0f}s")
    save(args, "table1", summary)


if __name__ == "__main__":
    main()
