"""End-to-end acceptance checks at desk scale.

Each test prints one ``PASS`` / ``FAIL`` line, collected again in the
terminal summary.  The Monte Carlo studies share pools, pool proxies and
replication results through module-level caches, so the 0.5% pool and its
proxies are built once and the outlier sweep reuses the count-metric study.
Run only this module with ``pytest -m acceptance -s``.
"""

import functools
import math
import time

import numpy as np
import pytest
from scipy import special

from conftest import ACCEPTANCE_LINES
from state_ate.cli import main as cli_main
from state_ate.cli import write_csv
from state_ate.data import ExperimentFrame, MetricKind, MetricSpec
from state_ate.estimators import Flavor, dim_ratio, regression_adjusted
from state_ate.ratio import build_transform
from state_ate.simulation import (
    DgpConfig,
    draw_replication,
    fit_pool_proxies,
    generate_pool,
    inject_outliers,
    run_monte_carlo,
)
from state_ate.state_em import (
    EmConfig,
    fit_state,
    fit_t_regression,
    state_design,
    t_regression_cov,
)

pytestmark = pytest.mark.acceptance

POOL_SEED = DgpConfig.seed
MC_SEED = 2024
REPS = 1000
SWEEP_REPS = 500
FRACTIONS = (0.0, 0.0025, 0.005, 0.01)
BAND = (0.932, 0.968)
COUNT_NAMES = ["dim", "cuped", "cupac", "mlrate", "state"]
RATIO_NAMES = ["ratio_dim", "ratio_cuped_delta", "ratio_transformed_dim", "ratio_state"]
SWEEP_NAMES = ["dim", "cupac", "mlrate", "state"]


def record(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def in_band(x, band=BAND):
    return band[0] <= x <= band[1]


# shared fixtures ----------------------------------------------------------

@functools.cache
def clean_pool():
    return generate_pool(DgpConfig(seed=POOL_SEED, outlier_fraction=0.0))


@functools.cache
def pool_at(fraction):
    return inject_outliers(clean_pool(), fraction)


@functools.cache
def proxies_at(fraction):
    return fit_pool_proxies(pool_at(fraction), ratio=fraction == 0.005)


@functools.cache
def table1():
    return run_monte_carlo(pool_at(0.005), COUNT_NAMES, "aa", REPS, MC_SEED, proxies=proxies_at(0.005))


@functools.cache
def table2():
    return run_monte_carlo(pool_at(0.005), RATIO_NAMES, "aa", REPS, MC_SEED, proxies=proxies_at(0.005))


def columns(summary, names, reps):
    return {n: summary.estimates[:reps, summary.estimators.index(n)] for n in names}


@functools.cache
def sweep_estimates(fraction):
    """``SWEEP_REPS`` replications per fraction, common seeds across fractions."""
    if fraction == 0.005:
        return columns(table1(), SWEEP_NAMES, SWEEP_REPS)
    s = run_monte_carlo(pool_at(fraction), SWEEP_NAMES, "aa", SWEEP_REPS, MC_SEED,
                        proxies=proxies_at(fraction))
    return columns(s, SWEEP_NAMES, SWEEP_REPS)


def var_red(est, name, rows=slice(None)):
    return 1.0 - np.var(est[name][rows], ddof=1) / np.var(est["dim"][rows], ddof=1)


def replication_frame(fraction, rep, ratio=False):
    pool = pool_at(fraction)
    idx, t = draw_replication(pool, MC_SEED, rep)
    frame = ExperimentFrame(pool.covariates[idx], t, pool.y0[idx], pool.z0[idx] if ratio else None)
    return frame, idx


# 1-3: Monte Carlo tables and sweep ----------------------------------------

def test_criterion_01_count_table():
    s = table1()
    dim, cuped, cupac, mlrate, state = (s[n] for n in COUNT_NAMES)
    checks = {
        "dim coverage": in_band(dim.empirical_coverage),
        "cuped var.red": 0.15 <= cuped.var_reduction_vs_dim <= 0.45,
        "cupac var.red": 0.20 <= cupac.var_reduction_vs_dim <= 0.50,
        "mlrate var.red": 0.20 <= mlrate.var_reduction_vs_dim <= 0.50,
        "cupac~mlrate": abs(cupac.var_reduction_vs_dim - mlrate.var_reduction_vs_dim) < 0.05,
        "state var.red": state.var_reduction_vs_dim >= 0.70,
        "state coverage": in_band(state.empirical_coverage),
    }
    detail = (f"count table, DIM cov {100 * dim.empirical_coverage:.1f}, Var.Red% CUPED "
              f"{100 * cuped.var_reduction_vs_dim:.1f} CUPAC {100 * cupac.var_reduction_vs_dim:.1f} "
              f"MLRATE {100 * mlrate.var_reduction_vs_dim:.1f} STATE {100 * state.var_reduction_vs_dim:.1f} "
              f"(cov {100 * state.empirical_coverage:.1f})")
    failed = [k for k, ok in checks.items() if not ok]
    record(1, not failed, detail + (f"; failed {failed}" if failed else ""))


def test_criterion_02_ratio_table():
    s = table2()
    covs = {n: s[n].empirical_coverage for n in RATIO_NAMES}
    state = s["ratio_state"].var_reduction_vs_dim
    tdim = s["ratio_transformed_dim"].var_reduction_vs_dim
    # the transformed-label DIM must sit within 10 points of the weak linear baseline level (6.7%)
    checks = {
        "coverages": all(in_band(c) for c in covs.values()),
        "state var.red": state >= 0.75,
        "transformed dim": abs(100 * tdim - 6.7) <= 10.0,
    }
    detail = ("ratio table, cov " + " ".join(f"{n}={100 * c:.1f}" for n, c in covs.items())
              + f", Var.Red% STATE {100 * state:.1f} transformed-DIM {100 * tdim:.1f} "
              f"CUPED-delta {100 * s['ratio_cuped_delta'].var_reduction_vs_dim:.1f}")
    failed = [k for k, ok in checks.items() if not ok]
    record(2, not failed, detail + (f"; failed {failed}" if failed else ""))


def paired_bootstrap_se(a, b, name, n_boot=400, seed=0):
    """Bootstrap SE of ``var_red(b) - var_red(a)`` resampling replications jointly."""
    rng = np.random.default_rng(seed)
    diffs = np.empty(n_boot)
    for k in range(n_boot):
        rows = rng.integers(0, SWEEP_REPS, SWEEP_REPS)
        diffs[k] = var_red(b, name, rows) - var_red(a, name, rows)
    return float(np.std(diffs, ddof=1))


def test_criterion_03_outlier_sweep():
    est = [sweep_estimates(f) for f in FRACTIONS]
    ratio = [np.var(e["state"], ddof=1) / np.var(e["dim"], ddof=1) for e in est]
    ml = [var_red(e, "mlrate") for e in est]
    st = [var_red(e, "state") for e in est]
    steps = [(ml[k + 1] - ml[k], paired_bootstrap_se(est[k], est[k + 1], "mlrate")) for k in range(3)]
    checks = {
        "state~mlrate at 0": abs(st[0] - ml[0]) < 0.05,
        "var ratio non-increasing": all(ratio[k + 1] <= ratio[k] for k in range(3)),
        "mlrate monotone within noise": all(d <= 2 * se for d, se in steps),
        "mlrate falls overall": ml[-1] < ml[0],
    }
    detail = ("sweep " + ", ".join(
        f"{100 * f:g}%: STATE {100 * s:.1f} MLRATE {100 * m:.1f} var(S)/var(D) {r:.3f}"
        for f, s, m, r in zip(FRACTIONS, st, ml, ratio)))
    failed = [k for k, ok in checks.items() if not ok]
    record(3, not failed, detail + (f"; failed {failed}" if failed else ""))


# 4: EM internals ----------------------------------------------------------

class EmAudit:
    """Recompute every sweep of a fit from the previous sweep's parameters."""

    def __init__(self, y, design, config):
        self.y, self.X, self.config = y, design, config
        a, *_ = np.linalg.lstsq(design, y, rcond=None)
        r = y - design @ a
        self.prev = (a, float(np.mean(r * r)), config.fix_v or config.v_init)
        self.prev_f = None
        self.worst = dict(f_drop=0.0, e_step=0.0, m_coef=0.0, m_scale=0.0, dof=0.0)
        self.unclamped_dof_failures = 0

    def __call__(self, it):
        y, X = self.y, self.X
        a0, s0, v0 = self.prev
        r0 = y - X @ a0
        xi = (v0 + 1.0) / 2.0
        zeta = v0 / 2.0 + r0 * r0 / (2.0 * s0)
        e_err = max(np.max(np.abs(it.xi - xi)) / xi, np.max(np.abs(it.zeta / zeta - 1.0)),
                    np.max(np.abs(it.weights - xi / zeta) / (xi / zeta)),
                    np.max(np.abs(it.log_weights - (special.digamma(xi) - np.log(zeta)))))
        if it.iteration == 1:
            # the first sweep starts from an OLS fit computed by a different solver
            e_err = 0.0 if e_err < 1e-6 else e_err
        w = it.weights
        r = y - X @ it.a
        wr = w * r
        cosines = np.abs(X.T @ wr) / (np.sqrt(np.sum(wr * r)) * np.sqrt((w[:, None] * X * X).sum(axis=0)))
        scale_err = abs(it.sigma2 / np.mean(wr * r) - 1.0)
        dof = 0.0
        if self.config.fix_v is None:
            half = it.v / 2.0
            n = len(y)
            dof = abs(n * (np.log(half) - special.digamma(half)) + np.sum(1.0 + it.log_weights - w))
            lo, hi = self.config.v_bounds
            if dof > 1e-8 and it.v not in (lo, hi):
                self.unclamped_dof_failures += 1
            if it.v in (lo, hi):
                dof = 0.0
        drop = 0.0
        if self.prev_f is not None:
            drop = max(0.0, (self.prev_f - it.free_energy) / abs(self.prev_f))
        for k, val in zip(self.worst, (drop, e_err, float(np.max(cosines)), scale_err, dof)):
            self.worst[k] = max(self.worst[k], val)
        self.prev = (it.a, it.sigma2, it.v)
        self.prev_f = it.free_energy


def em_problems():
    out = []
    for rep in range(6):
        frame, idx = replication_frame(0.005, rep)
        out.append(("count", frame.y, state_design(frame, proxies_at(0.005).y[idx]), EmConfig()))
    for rep in range(4):
        frame, idx = replication_frame(0.005, rep, ratio=True)
        tr = build_transform(frame)
        out.append(("ratio", tr.p, state_design(frame, proxies_at(0.005).p[idx]), EmConfig()))
    for rep in range(2):
        frame, idx = replication_frame(0.0, rep)
        out.append(("gauss", frame.y, state_design(frame, proxies_at(0.0).y[idx]), EmConfig(max_iter=200)))
    for seed in range(4):
        y, X, _ = t3_problem(seed, n=20_000)
        out.append(("t3", y, X, EmConfig()))
    y, X, _ = t3_problem(99, n=20_000)
    out.append(("frozen", y, X, EmConfig(fix_v=5.0)))
    return out


def test_criterion_04_em_correctness():
    worst = dict(f_drop=0.0, e_step=0.0, m_coef=0.0, m_scale=0.0, dof=0.0)
    unclamped = 0
    sweeps = 0
    for _, y, X, config in em_problems():
        audit = EmAudit(y, X, config)
        fit = fit_t_regression(y, X, config, on_iteration=audit)
        trace = np.asarray(fit.free_energy_trace)
        tail_drop = max(0.0, (trace[-2] - trace[-1]) / abs(trace[-2]))
        audit.worst["f_drop"] = max(audit.worst["f_drop"], tail_drop)
        for k in worst:
            worst[k] = max(worst[k], audit.worst[k])
        unclamped += audit.unclamped_dof_failures
        sweeps += fit.iterations
    checks = {
        "free energy non-decreasing": worst["f_drop"] <= 1e-8,
        "e-step closed form": worst["e_step"] <= 1e-10,
        "coefficient equations": worst["m_coef"] <= 1e-8,
        "scale equation": worst["m_scale"] <= 1e-10,
        "dof root or clamped": unclamped == 0,
    }
    detail = (f"{sweeps} sweeps on 17 fits, worst rel F drop {worst['f_drop']:.1e}, E-step err "
              f"{worst['e_step']:.1e}, normal-eq cosine {worst['m_coef']:.1e}, sigma2 err "
              f"{worst['m_scale']:.1e}, dof residual {worst['dof']:.1e}")
    failed = [k for k, ok in checks.items() if not ok]
    record(4, not failed, detail + (f"; failed {failed}" if failed else ""))


# 5-6: limits and recovery -------------------------------------------------

GAUSS_REPS = 200


def test_criterion_05_gaussian_limit():
    est = sweep_estimates(0.0)
    d = est["state"][:GAUSS_REPS] - est["mlrate"][:GAUSS_REPS]
    mc_se = float(np.std(d, ddof=1) / math.sqrt(GAUSS_REPS))
    gap = abs(float(np.mean(d)))

    # both fits are scale-equivariant in y, and at v=1e6 they differ by a genuine
    # O(1/v) term proportional to the residual scale, so compare on standardised y
    worst = raw = 0.0
    frozen = EmConfig(fix_v=1e6, tol=1e-14)
    for rep in range(GAUSS_REPS):
        frame, idx = replication_frame(0.0, rep)
        X = state_design(frame, proxies_at(0.0).y[idx])
        sd = float(np.std(frame.y))
        for target, scale in ((frame.y / sd, 1.0), (frame.y, sd)):
            ols, *_ = np.linalg.lstsq(X, target, rcond=None)
            fit = fit_t_regression(target, X, frozen)
            gap_ = float(np.max(np.abs(fit.a - ols)))
            if scale == 1.0:
                worst = max(worst, gap_)
            else:
                raw = max(raw, gap_)
    checks = {"state vs mlrate": gap < 3 * mc_se, "frozen v vs ols": worst <= 1e-6}
    detail = (f"clean Gaussian, {GAUSS_REPS} reps: mean(STATE - MLRATE) {gap:.2e} vs 3 MC SE "
              f"{3 * mc_se:.2e}; v=1e6 vs OLS max coef gap {worst:.1e} on unit-sd y "
              f"({raw:.1e} in raw units)")
    failed = [k for k, ok in checks.items() if not ok]
    record(5, not failed, detail + (f"; failed {failed}" if failed else ""))


TRUE_A = np.array([1.0, 0.5, 2.0])


def t3_problem(seed, n=50_000, v=3.0, scale=2.0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.random(n) < 0.5, rng.normal(size=n)]).astype(float)
    return X @ TRUE_A + scale * rng.standard_t(v, n), X, rng


def test_criterion_06_parameter_recovery():
    passes, vs = 0, []
    for seed in range(50):
        y, X, _ = t3_problem(seed)
        fit = fit_t_regression(y, X)
        se = np.sqrt(np.diag(t_regression_cov(fit, y, X)))
        ok = 2.5 <= fit.v <= 3.6 and bool(np.all(np.abs(fit.a - TRUE_A) <= 3 * se))
        passes += ok
        vs.append(fit.v)
    record(6, passes >= 45, f"t(3), n=50k: {passes}/50 seeds pass, v range [{min(vs):.2f}, {max(vs):.2f}]")


# 7-8: ratio metric --------------------------------------------------------

def test_criterion_07_ratio_identities():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(4, 400))
        t = np.zeros(n, dtype=np.int8)
        t[rng.permutation(n)[: int(rng.integers(2, n - 1))]] = 1
        scale = 10.0 ** rng.uniform(-3, 3)
        z = scale * rng.lognormal(0.0, 1.0, n)
        y = scale * rng.gamma(2.0, 3.0, n) * z
        f = ExperimentFrame(np.zeros((n, 0)), t, y, z)
        tr = build_transform(f)
        tt = f.treated
        dp = tr.p[tt].mean() - tr.p[~tt].mean()
        dr = y[tt].sum() / z[tt].sum() - y[~tt].sum() / z[~tt].sum()
        mag = z[tt].mean() * z[~tt].mean() * max(abs(y[tt].sum() / z[tt].sum()), abs(y[~tt].sum() / z[~tt].sum()))
        worst = max(worst, abs(dp - tr.scale * dr) / mag)

    pop = generate_pool(DgpConfig(pool_size=1_000_000, seed=POOL_SEED, outlier_fraction=0.0))
    tau = pop.y1.mean() / pop.z1.mean() - pop.y0.mean() / pop.z0.mean()
    du, _ = ratio_frames(pop)
    mc_se = float(np.std(du, ddof=1) / math.sqrt(len(du)))
    unbiased = abs(du.mean() - tau) < 4 * mc_se

    # shrink the effect so the ratio moves by at most 3%
    rc = pop.y0.mean() / pop.z0.mean()
    s = min(1.0, 0.025 * rc / abs(tau))
    small = generate_pool(DgpConfig(pool_size=1_000_000, seed=POOL_SEED, outlier_fraction=0.0, effect_scale=s))
    shift = abs(small.y1.mean() / small.z1.mean() / rc - 1.0)
    du2, dr2 = ratio_frames(small)
    vr = float(np.var(du2, ddof=1) / np.var(dr2, ddof=1))
    checks = {"identity": worst <= 1e-12, "property 1": unbiased, "property 2": 0.9 <= vr <= 1.1 and shift <= 0.03}
    detail = (f"identity rel err {worst:.1e}; mean dU {du.mean():.5f} vs tau_r {tau:.5f} "
              f"(4 MC SE {4 * mc_se:.1e}); var(dU)/var(dR) {vr:.3f} at {100 * shift:.2f}% shift")
    failed = [k for k, ok in checks.items() if not ok]
    record(7, not failed, detail + (f"; failed {failed}" if failed else ""))


def ratio_frames(pop, frames=10_000, n=2000, chunk=500, seed=11):
    """Delta U (population-scaled) and delta R over ``frames`` i.i.d. A/B frames."""
    rng = np.random.default_rng(seed)
    ezt, ezc = pop.z1.mean(), pop.z0.mean()
    du, dr = [], []
    for _ in range(frames // chunk):
        idx = rng.integers(0, pop.size, (chunk, n))
        t = rng.random((chunk, n)) < 0.5
        y = np.where(t, pop.y1[idx], pop.y0[idx])
        z = np.where(t, pop.z1[idx], pop.z0[idx])
        nt, nc = t.sum(axis=1), (~t).sum(axis=1)
        yt, yc = (y * t).sum(axis=1) / nt, (y * ~t).sum(axis=1) / nc
        zt, zc = (z * t).sum(axis=1) / nt, (z * ~t).sum(axis=1) / nc
        du.append((zc * yt - yc * zt) / (ezt * ezc))
        dr.append(yt / zt - yc / zc)
    return np.concatenate(du), np.concatenate(dr)


def bootstrap_ratio_sd(frame, resamples=10_000, chunk=500, seed=0):
    rng = np.random.default_rng(seed)
    groups = [(frame.y[m], frame.z[m]) for m in (frame.treated, ~frame.treated)]
    out = []
    for _ in range(resamples // chunk):
        r = []
        for y, z in groups:
            i = rng.integers(0, len(y), (chunk, len(y)))
            r.append(y[i].sum(axis=1) / z[i].sum(axis=1))
        out.append(r[0] - r[1])
    return float(np.std(np.concatenate(out), ddof=1))


def test_criterion_08_delta_method_calibration():
    pool = pool_at(0.005)
    rng = np.random.default_rng(8)
    parts, ok = [], True
    for n in (1000, 5000):
        idx = rng.choice(pool.size, n, replace=False)
        t = (rng.random(n) < 0.5).astype(np.int8)
        frame = ExperimentFrame(pool.covariates[idx], t, pool.y0[idx], pool.z0[idx])
        se = dim_ratio(frame).std_error
        sd = bootstrap_ratio_sd(frame)
        ok &= abs(se / sd - 1.0) <= 0.15
        parts.append(f"n={n}: delta SE {se:.3e} vs bootstrap SD {sd:.3e} ({100 * (se / sd - 1):+.1f}%)")
    record(8, ok, "; ".join(parts))


# 9-11: robustness, cost, reproducibility --------------------------------

def test_criterion_09_single_outlier():
    clean = sweep_estimates(0.0)
    mc_se = float(np.std(clean["state"], ddof=1))
    frame, idx = replication_frame(0.0, 0)
    g = proxies_at(0.0).y[idx]
    y = frame.y.copy()
    y[np.flatnonzero(~frame.treated)[0]] += 1e6
    state0 = fit_state(frame, g).ate
    state1 = fit_state(frame, g, y=y).ate
    ml0 = regression_adjusted(frame, g, Flavor.MLRATE).estimate
    ml1 = regression_adjusted(frame, g, Flavor.MLRATE, y=y).estimate
    ds, dm = abs(state1 - state0), abs(ml1 - ml0)
    record(9, ds < 2 * mc_se and dm > 10 * mc_se,
           f"+1e6 on one control unit: STATE moves {ds:.2e}, MLRATE moves {dm:.2e}, clean MC SE {mc_se:.2e}")


def test_criterion_10_em_scaling():
    config = EmConfig(max_iter=15, tol=1e-300)
    times = []
    for n in (50_000, 100_000, 200_000, 400_000):
        y, X, _ = t3_problem(0, n=n)
        best = math.inf
        for _ in range(5):
            t0 = time.perf_counter()
            fit = fit_t_regression(y, X, config)
            best = min(best, time.perf_counter() - t0)
        assert fit.iterations == config.max_iter
        times.append(best)
    ratios = [b / a for a, b in zip(times, times[1:])]
    record(10, max(ratios) <= 2.3,
           "15 sweeps at N=50k..400k: " + ", ".join(f"{t:.3f}s" for t in times)
           + "; doubling ratios " + ", ".join(f"{r:.2f}" for r in ratios))


def run_cli(tmp_path, name, argv):
    out = tmp_path / name
    assert cli_main(argv + ["--output", str(out)]) == 0
    return out.read_bytes()


def test_criterion_11_determinism(tmp_path):
    rng = np.random.default_rng(0)
    n = 3000
    X = rng.normal(size=(n, 3))
    f = ExperimentFrame(X, np.arange(n) % 2, 10 + X @ [1.0, 2.0, 3.0] + rng.standard_t(3, n),
                        5 + rng.uniform(0, 1, n), covariate_names=("a", "b", "c"))
    data = tmp_path / "frame.csv"
    write_csv(f, data, MetricSpec(MetricKind.RATIO, "y", "z"))
    commands = {
        "analyze": ["analyze", "--input", str(data), "--metric", "ratio", "--y", "y", "--z", "z",
                    "--covariates", "a,b,c", "--estimators", "ratio_dim,ratio_state", "--seed", "5"],
        "simulate": ["simulate", "--fast", "--reps", "12", "--seed", "5", "--outliers", "0.005",
                     "--estimators", "dim,mlrate,state"],
        "sweep": ["sweep", "--fast", "--reps", "6", "--seed", "5", "--fractions", "0,0.01",
                  "--estimators", "dim,state", "--predictor", "basis_ridge"],
    }
    same = {}
    for name, argv in commands.items():
        outs = [run_cli(tmp_path, f"{name}{k}.json", argv + ["--n-jobs", str(j)])
                for k, j in enumerate((1, 1, 2))]
        same[name] = outs[0] == outs[1] == outs[2]
    record(11, all(same.values()),
           "byte-identical reruns (n_jobs 1, 1, 2): " + ", ".join(f"{k}={v}" for k, v in same.items()))
