"""Command-line entry point: ``analyze``, ``simulate`` and ``sweep``.

Settings resolve in the order command-line flag, ``STATE_ATE_<FLAG>``
environment variable, ``--config`` JSON file, built-in default.  Every
JSON artifact embeds ``schema_version`` and the fully resolved settings.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from state_ate.data import ExperimentFrame, FrameValidationError, MetricKind, MetricSpec, validate_frame
from state_ate.errors import StateAteError
from state_ate.predictors import Family, PredictorConfig, TrainOn, TreeParams
from state_ate.registry import REGISTRY, EstimationContext, get_spec
from state_ate.simulation import (
    DgpConfig,
    SimulationAborted,
    generate_pool,
    inject_outliers,
    run_monte_carlo,
    sweep_outlier_fraction,
)
from state_ate.state_em import EmConfig, fit_state

log = logging.getLogger("state_ate")

SCHEMA_VERSION = 1
ENV_PREFIX = "STATE_ATE_"
FAST_REPS = 200


class ParseError(ValueError):
    def __init__(self, row: int, column: str, message: str):
        self.row, self.column = row, column
        super().__init__(f"row {row}, column {column!r}: {message}")


class ConfigError(ValueError):
    pass


# CSV ingestion ---------------------------------------------------------------

def ingest_csv(path, metric: MetricSpec, treatment: str = "treatment", covariates=(), unit_id: str | None = None) -> ExperimentFrame:
    """Read a header-first, comma-delimited UTF-8 file into a validated frame.

    ``row`` in a :class:`ParseError` is the 1-based line number, so the
    first data line is row 2.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    covariates = list(covariates)
    wanted = [treatment, metric.numerator, *covariates]
    if metric.denominator:
        wanted.append(metric.denominator)
    if unit_id:
        wanted.append(unit_id)

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "", "empty file; header row required") from None
        pos = {name: j for j, name in enumerate(header)}
        for name in wanted:
            if name not in pos:
                raise ParseError(1, name, "column missing from header")
        extra = [h for h in header if h not in set(wanted)]
        if extra:
            log.warning("ignoring unmapped columns: %s", ", ".join(extra))

        t, y, z, ids, X = [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(line, "", f"expected {len(header)} fields, got {len(row)}")
            raw_t = row[pos[treatment]].strip()
            if raw_t not in ("0", "1"):
                raise ParseError(line, treatment, f"treatment must be 0 or 1, got {raw_t!r}")
            t.append(int(raw_t))
            y.append(_float(row, pos, metric.numerator, line))
            if metric.denominator:
                z.append(_float(row, pos, metric.denominator, line))
            X.append([_float(row, pos, c, line) for c in covariates])
            if unit_id:
                ids.append(_int(row, pos, unit_id, line))

    n = len(t)
    frame = ExperimentFrame(
        covariates=np.asarray(X, dtype=float).reshape(n, len(covariates)),
        treatment=np.asarray(t, dtype=np.int8),
        y=np.asarray(y, dtype=float),
        z=np.asarray(z, dtype=float) if metric.denominator else None,
        unit_ids=np.asarray(ids, dtype=np.int64) if unit_id else None,
        covariate_names=tuple(covariates),
    )
    return validate_frame(frame, metric)


def _float(row, pos, column, line) -> float:
    try:
        return float(row[pos[column]])
    except ValueError:
        raise ParseError(line, column, f"not a number: {row[pos[column]]!r}") from None


def _int(row, pos, column, line) -> int:
    try:
        return int(row[pos[column]])
    except ValueError:
        raise ParseError(line, column, f"not an integer: {row[pos[column]]!r}") from None


def write_csv(frame: ExperimentFrame, path, metric: MetricSpec, treatment: str = "treatment", unit_id: str | None = None) -> None:
    """Inverse of :func:`ingest_csv`; floats are written with ``repr`` so they round-trip exactly."""
    cols = [treatment, metric.numerator]
    if metric.denominator:
        cols.append(metric.denominator)
    cols += list(frame.covariate_names)
    if unit_id:
        cols.append(unit_id)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(frame.n):
            row = [int(frame.treatment[i]), repr(float(frame.y[i]))]
            if metric.denominator:
                row.append(repr(float(frame.z[i])))
            row += [repr(float(v)) for v in frame.covariates[i]]
            if unit_id:
                row.append(int(frame.unit_ids[i]))
            w.writerow(row)


# argument parsing ------------------------------------------------------------

def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _float_list(text: str) -> list[float]:
    return [float(s) for s in _csv_list(text)]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag defaults (keys are flag names with underscores)")
    p.add_argument("--metric", choices=[k.value for k in MetricKind])
    p.add_argument("--estimators", type=_csv_list, help="comma-separated estimator tags")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="write to this path instead of stdout")
    p.add_argument("--format", choices=["json", "table", "csv"], default="json")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--se-method", choices=["m_estimator", "fixed_weights"], default="m_estimator")
    p.add_argument("--winsor-percentile", type=float, default=0.999)
    p.add_argument("--huber-delta", type=float, default=1.345)
    g = p.add_argument_group("predictor")
    g.add_argument("--predictor", choices=[f.value for f in Family], default=Family.BOOSTED_TREES.value)
    g.add_argument("--folds", type=int, default=5)
    g.add_argument("--predictor-seed", type=int, default=0)
    g.add_argument("--train-on", choices=[t.value for t in TrainOn], default=TrainOn.POOLED.value)
    g.add_argument("--n-trees", type=int, default=TreeParams.n_trees)
    g.add_argument("--max-depth", type=int, default=TreeParams.max_depth)
    g.add_argument("--learning-rate", type=float, default=TreeParams.learning_rate)
    g.add_argument("--subsample", type=float, default=TreeParams.subsample)
    g.add_argument("--ridge-alpha", type=float, default=1e-6)
    g.add_argument("--n-jobs", type=int, default=1)
    e = p.add_argument_group("EM")
    e.add_argument("--em-max-iter", type=int, default=EmConfig.max_iter)
    e.add_argument("--em-tol", type=float, default=EmConfig.tol)
    e.add_argument("--em-v-init", type=float, default=EmConfig.v_init)
    e.add_argument("--em-v-max", type=float, default=EmConfig.v_bounds[1])


def _add_simulation(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reps", type=int, help="replications (default 1000, or 200 with --fast)")
    p.add_argument("--mode", choices=["aa", "ab"], default="aa")
    p.add_argument("--fast", action="store_true", help="pool 20k, draw 2k, 200 replications")
    p.add_argument("--pool-seed", type=int, default=DgpConfig.seed)
    p.add_argument("--pool-size", type=int, default=DgpConfig.pool_size)
    p.add_argument("--draw-size", type=int, default=DgpConfig.draw_size)
    p.add_argument("--effect-scale", type=float, default=DgpConfig.effect_scale)
    p.add_argument("--proxy-scope", choices=["pool", "replication"], default="pool")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="state-ate", description="Robust ATE estimation and simulation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate treatment effects on a CSV file")
    _add_common(a)
    a.add_argument("--input")
    a.add_argument("--y", default="y")
    a.add_argument("--z")
    a.add_argument("--treatment", default="treatment")
    a.add_argument("--covariates", type=_csv_list, default=[])
    a.add_argument("--unit-id")
    a.add_argument("--em-trace", help="dump the STATE fit trace as JSON to this path")

    s = sub.add_parser("simulate", help="Monte Carlo run on the synthetic outcome model")
    _add_common(s)
    _add_simulation(s)
    s.add_argument("--outliers", type=float, default=DgpConfig.outlier_fraction)

    w = sub.add_parser("sweep", help="Monte Carlo runs over several outlier fractions")
    _add_common(w)
    _add_simulation(w)
    w.add_argument("--fractions", type=_float_list, default=[0.0, 0.0025, 0.005, 0.01])
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _apply_overrides(sub: argparse.ArgumentParser, config: dict, environ) -> None:
    """Layer config-file values, then environment variables, under the flags."""
    dests = {a.dest: a for a in sub._actions if a.option_strings}
    unknown = set(config) - set(dests) - {"config"}
    if unknown:
        raise ConfigError(f"unknown keys in config file: {sorted(unknown)}")
    defaults = {}
    for dest, action in dests.items():
        if dest in config:
            defaults[dest] = config[dest]
        raw = environ.get(ENV_PREFIX + dest.upper())
        if raw is not None:
            if isinstance(action, argparse._StoreTrueAction):
                defaults[dest] = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                defaults[dest] = action.type(raw) if action.type else raw
    sub.set_defaults(**defaults)


def parse_args(argv=None, environ=None) -> argparse.Namespace:
    environ = os.environ if environ is None else environ
    parser = build_parser()
    first = parser.parse_args(argv)
    config_path = first.config or environ.get(ENV_PREFIX + "CONFIG")
    config = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise ConfigError("config file must hold a JSON object")
    _apply_overrides(_subparser(parser, first.command), config, environ)
    return parser.parse_args(argv)


# resolved settings -----------------------------------------------------------

def predictor_config(args) -> PredictorConfig:
    return PredictorConfig(
        family=args.predictor, k=args.folds, seed=args.predictor_seed, train_on=args.train_on,
        trees=TreeParams(n_trees=args.n_trees, max_depth=args.max_depth,
                         learning_rate=args.learning_rate, subsample=args.subsample),
        ridge_alpha=args.ridge_alpha, n_jobs=args.n_jobs,
    )


def em_config(args) -> EmConfig:
    return EmConfig(max_iter=args.em_max_iter, tol=args.em_tol, v_init=args.em_v_init,
                    v_bounds=(EmConfig.v_bounds[0], args.em_v_max))


def _estimator_names(args, metric: MetricKind | None) -> list[str]:
    if args.estimators:
        names = list(dict.fromkeys(args.estimators))
        for n in names:
            if n not in REGISTRY:
                raise ConfigError(f"unknown estimator {n!r}; choose from {sorted(REGISTRY)}")
        if metric is not None:
            wrong = [n for n in names if get_spec(n).metric is not metric]
            if wrong:
                raise ConfigError(f"estimators {wrong} do not apply to a {metric.value} metric")
        return names
    if metric is None:
        return list(REGISTRY)
    return [n for n, s in REGISTRY.items() if s.metric is metric]


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "value") and not isinstance(value, (int, float, str)):
        return value.value
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _resolved(args, **extra) -> dict:
    # worker count is left out: results do not depend on it
    d = {k: v for k, v in vars(args).items() if k not in ("config", "output", "verbose", "n_jobs")}
    d["predictor_config"] = {k: v for k, v in asdict(predictor_config(args)).items() if k != "n_jobs"}
    d["em_config"] = asdict(em_config(args))
    d.update(extra)
    return _jsonable(d)


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# commands --------------------------------------------------------------------

def _analyze(args) -> str:
    if not args.input:
        raise ConfigError("analyze needs --input")
    if not args.metric:
        raise ConfigError("analyze needs --metric count|ratio")
    kind = MetricKind(args.metric)
    if kind is MetricKind.RATIO and not args.z:
        raise ConfigError("a ratio metric needs a denominator column (--z)")
    names = _estimator_names(args, kind)
    needs_x = [n for n in names if get_spec(n).needs_proxy or "cuped" in n]
    if needs_x and not args.covariates:
        raise ConfigError(f"estimators {needs_x} need --covariates")
    metric = MetricSpec(kind, args.y, args.z if kind is MetricKind.RATIO else None)

    frame = ingest_csv(args.input, metric, args.treatment, args.covariates, args.unit_id)
    ctx = EstimationContext(frame, predictor=predictor_config(args), em=em_config(args), alpha=args.alpha,
                            winsor_percentile=args.winsor_percentile, huber_delta=args.huber_delta,
                            se_method=args.se_method)
    reports = []
    for name in names:
        try:
            reports.append(get_spec(name).run(ctx))
        except (StateAteError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            exc.estimator = name
            raise
    if args.em_trace and "state" in names:
        fit = fit_state(frame, ctx.proxy_y, ctx.em)
        trace = {"a": fit.a.tolist(), "sigma2": fit.sigma2, "v": fit.v, "iterations": fit.iterations,
                 "converged": fit.converged, "dof_clamped": fit.dof_clamped,
                 "free_energy_trace": list(fit.free_energy_trace)}
        Path(args.em_trace).write_text(_dump_json(trace), encoding="utf-8")

    if args.format == "json":
        return _dump_json({"schema_version": SCHEMA_VERSION, "command": "analyze",
                           "config": _resolved(args, n_units=frame.n),
                           "reports": [r.to_dict() for r in reports]})
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        fields = list(reports[0].to_dict())
        w.writerow(fields)
        for r in reports:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.to_dict().values()])
        return buf.getvalue()
    lines = [f"{'estimator':<24}{'estimate':>14}{'std_error':>14}{'ci_low':>14}{'ci_high':>14}{'p_value':>10}"]
    for r in reports:
        lines.append(f"{r.estimator_tag:<24}{r.estimate:>14.6g}{r.std_error:>14.6g}"
                     f"{r.ci_low:>14.6g}{r.ci_high:>14.6g}{r.p_value:>10.4f}")
    return "\n".join(lines) + "\n"


def _dgp(args, fraction: float) -> DgpConfig:
    if args.fast:
        fast = DgpConfig.fast()
        args.pool_size, args.draw_size = fast.pool_size, fast.draw_size
    return DgpConfig(pool_size=args.pool_size, draw_size=args.draw_size, seed=args.pool_seed,
                     outlier_fraction=fraction, effect_scale=args.effect_scale)


def _reps(args) -> int:
    if args.reps is not None:
        return args.reps
    return FAST_REPS if args.fast else 1000


def _mc_kwargs(args) -> dict:
    return dict(mode=args.mode, reps=_reps(args), seed=args.seed, predictor=predictor_config(args),
                em=em_config(args), proxy_scope=args.proxy_scope, n_jobs=args.n_jobs, alpha=args.alpha,
                winsor_percentile=args.winsor_percentile, se_method=args.se_method)


def _simulate(args) -> str:
    kind = MetricKind(args.metric) if args.metric else None
    names = _estimator_names(args, kind)
    cfg = _dgp(args, args.outliers)
    pool = inject_outliers(generate_pool(cfg), cfg.outlier_fraction)
    summary = run_monte_carlo(pool, names, **_mc_kwargs(args))
    if args.format == "table":
        return summary.to_table() + "\n"
    if args.format == "csv":
        return summary.to_csv()
    return _dump_json({"schema_version": SCHEMA_VERSION, "command": "simulate",
                       "config": _resolved(args, reps_run=summary.replications, realized_u=pool.u.tolist()),
                       "summary": summary.to_dict()})


def _sweep(args) -> str:
    kind = MetricKind(args.metric) if args.metric else None
    names = _estimator_names(args, kind)
    clean = generate_pool(_dgp(args, 0.0))
    summaries = sweep_outlier_fraction(clean, args.fractions, names, **_mc_kwargs(args))
    if args.format == "table":
        return "".join(f"outlier fraction {f:g}\n{s.to_table()}\n\n" for f, s in zip(args.fractions, summaries))
    if args.format == "csv":
        parts = []
        for i, (f, s) in enumerate(zip(args.fractions, summaries)):
            lines = s.to_csv().splitlines()
            if i == 0:
                parts.append("outlier_fraction," + lines[0])
            parts += [f"{f!r},{line}" for line in lines[1:]]
        return "\n".join(parts) + "\n"
    return _dump_json({"schema_version": SCHEMA_VERSION, "command": "sweep",
                       "config": _resolved(args, realized_u=clean.u.tolist()),
                       "summaries": [{"outlier_fraction": f, **s.to_dict()}
                                     for f, s in zip(args.fractions, summaries)]})


COMMANDS = {"analyze": _analyze, "simulate": _simulate, "sweep": _sweep}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except (ConfigError, OSError, json.JSONDecodeError, ValueError) as exc:
        _report_error(exc)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = COMMANDS[args.command](args)
    except (ConfigError, ParseError, FrameValidationError, FileNotFoundError, SimulationAborted,
            StateAteError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _report_error(exc)
        return 2 if isinstance(exc, (ConfigError, ParseError, FileNotFoundError)) else 1
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _report_error(exc: BaseException) -> None:
    err = {"error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "estimator", None):
        err["estimator"] = exc.estimator
    if isinstance(exc, ParseError):
        err.update(row=exc.row, column=exc.column)
    if isinstance(exc, FrameValidationError):
        err["violations"] = [list(v) for v in exc.violations[:20]]
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
