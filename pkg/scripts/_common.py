import argparse
import json
import time
from pathlib import Path

from state_ate.simulation import DgpConfig

POOL_SEED = 72
MC_SEED = 2024


def parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--pool-seed", type=int, default=POOL_SEED)
    p.add_argument("--seed", type=int, default=MC_SEED)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--fast", action="store_true", help="20k pool, 2k draws")
    p.add_argument("--out", type=Path, help="directory for JSON and CSV outputs")
    return p


def dgp(args, fraction):
    if args.fast:
        return DgpConfig.fast(seed=args.pool_seed, outlier_fraction=fraction)
    return DgpConfig(seed=args.pool_seed, outlier_fraction=fraction)


def save(args, name, summary):
    if args.out is None:
        return
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / f"{name}.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    (args.out / f"{name}.csv").write_text(summary.to_csv())


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
