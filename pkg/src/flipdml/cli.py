"""Command-line driver.

Commands: ``fit``, ``test``, ``band``, ``simulate``, ``mc``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure.  Errors are reported as a JSON object on stderr.

A ``--config`` file holds flat ``key = value`` lines whose keys are flag
names without the leading dashes; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, FlipDMLError, MissingColumn
from .estimator import PolySpec
from .nuisance import LearnerSpec
from .panel import ingest_csv, split_by_party, to_csv
from .pipeline import EstConfig, analyze
from .report import curve_csv_text, dumps, fit_report, provenance, tests_block
from .simgen import SimConfig, as_two_party, generate, monte_carlo

LEARNERS = {"mean": "mean", "linear": "linear", "ridge": "ridge", "boosted": "boosted_trees"}


# ---- argument parsing -----------------------------------------------------

def _analysis_flags(p, data=True, reps_is_m=True):
    if data:
        p.add_argument("--data", help="panel CSV (required)")
        p.add_argument("--party", choices=("d", "r"), help="party to analyse in a two-party file")
        p.add_argument("--validation", choices=("strict", "synthetic"), default="strict")
    p.add_argument("--spec", default="cubic", help="constant | linear | cubic | q=N")
    p.add_argument("--learner", choices=tuple(LEARNERS), default="boosted")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--ridge-lambda", type=float, default=None,
                   help="fixed ridge penalty (default: inner cross-validation)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--grid", type=int, default=1001)
    if reps_is_m:
        p.add_argument("--reps", "--M", dest="M", type=int, default=2000,
                       help="bootstrap replications")
    else:
        p.add_argument("--M", dest="M", type=int, default=2000, help="bootstrap replications")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--df-correction", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--config", help="key=value config file")


def _sim_flags(p):
    p.add_argument("--C", type=int, default=40, help="contests")
    p.add_argument("--n", type=int, default=None, help="precincts per contest (sets both bounds)")
    p.add_argument("--n-min", type=int, default=100)
    p.add_argument("--n-max", type=int, default=100)
    p.add_argument("--m", type=float, default=0.05, help="true mistake rate")
    p.add_argument("--true-theta", default=None,
                   help="comma-separated coefficients of a custom true effect polynomial")
    p.add_argument("--treated-prob", type=float, default=0.5)
    p.add_argument("--g-kind", choices=("linear", "nonlinear"), default="nonlinear")
    p.add_argument("--noise-sd", type=float, default=0.05)
    p.add_argument("--n-w", type=int, default=2)
    p.add_argument("--n-z", type=int, default=2)
    p.add_argument("--beta-a", type=float, default=2.0)
    p.add_argument("--beta-b", type=float, default=2.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flipdml", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit, test, band and mistakes on a panel CSV")
    _analysis_flags(p)
    p.add_argument("--csv-curve", help="write the effect curve as CSV")
    p.add_argument("--timestamp", action="store_true", help="record wall-clock time in provenance")

    p = sub.add_parser("test", help="run the Wald or bootstrap sup test battery")
    _analysis_flags(p)
    p.add_argument("--method", choices=("wald", "sup"), default="wald")

    p = sub.add_parser("band", help="pointwise and uniform confidence bands")
    _analysis_flags(p)
    p.add_argument("--csv-curve", help="write the effect curve as CSV")

    p = sub.add_parser("simulate", help="write a synthetic panel CSV and truth sidecar")
    _sim_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "--emit-data", dest="out", help="panel CSV path (required)")
    p.add_argument("--truth", help="truth JSON path (default: <out>.truth.json)")
    p.add_argument("--two-party", action="store_true",
                   help="write exact two-candidate columns y_d, y_r, x_d, x_r")
    p.add_argument("--config", help="key=value config file")

    p = sub.add_parser("mc", help="Monte Carlo coverage / size / power study")
    _sim_flags(p)
    _analysis_flags(p, data=False, reps_is_m=False)
    p.add_argument("--reps", type=int, default=200, help="Monte Carlo repetitions")
    p.add_argument("--emit-data", help="directory for per-repetition panel CSVs")
    p.add_argument("--no-sup", action="store_true", help="skip the bootstrap sup tests")
    return parser


def _read_config(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    if path and argv and argv[0] in COMMANDS:
        sub = _subparser(parser, argv[0])
        actions = {}
        for a in sub._actions:
            actions[a.dest] = a
            for opt in a.option_strings:
                actions[opt.lstrip("-").replace("-", "_")] = a
        defaults = {}
        for key, raw in _read_config(path).items():
            a = actions.get(key)
            if a is None or a.dest in ("help", "config"):
                raise ConfigError(f"unknown config key {key!r}")
            if a.nargs == 0:
                val = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    val = a.type(raw) if a.type else raw
                except ValueError:
                    raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
                if a.choices and val not in a.choices:
                    raise ConfigError(f"{key!r} must be one of {list(a.choices)}")
            defaults[a.dest] = val
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---- config objects ------------------------------------------------------

def learner_from_args(args) -> LearnerSpec:
    kind = LEARNERS[args.learner]
    params = {}
    if kind == "boosted_trees":
        params = dict(depth=args.depth, rounds=args.rounds, learning_rate=args.learning_rate,
                      min_leaf=args.min_leaf)
    elif kind == "ridge" and args.ridge_lambda is not None:
        params = {"lam": args.ridge_lambda}
    return LearnerSpec(kind, params)


def est_from_args(args, **over) -> EstConfig:
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    kw = dict(spec=PolySpec.parse(args.spec), learner=learner_from_args(args), K=args.folds,
              grid=args.grid, M=args.M, alpha=args.alpha, df_correction=args.df_correction)
    kw.update(over)
    return EstConfig(**kw)


def sim_from_args(args, seed) -> SimConfig:
    lo, hi = (args.n, args.n) if args.n is not None else (args.n_min, args.n_max)
    kw = dict(C=args.C, n_range=(lo, hi), treated_prob=args.treated_prob, m=args.m,
              g_kind=args.g_kind, noise_sd=args.noise_sd, n_w=args.n_w, n_z=args.n_z,
              x_dist=(args.beta_a, args.beta_b), seed=seed)
    if args.true_theta:
        try:
            theta = tuple(float(v) for v in args.true_theta.split(","))
        except ValueError:
            raise ConfigError("--true-theta must be comma-separated numbers") from None
        kw.update(q_truth="custom_poly", custom_theta=theta)
    return SimConfig(**kw)


def load_panel(args):
    if not args.data:
        raise ConfigError("--data is required")
    ds = ingest_csv(args.data, validation_mode=args.validation)
    if ds.is_two_party:
        if args.party is None:
            if ds.y is None:
                raise MissingColumn("two-party file: choose a party with --party d|r")
            return ds
        d, r = split_by_party(ds)
        return d if args.party == "d" else r
    if args.party is not None:
        raise MissingColumn("--party given but the file has no two-party columns")
    return ds


def _emit(text, path):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---- commands ------------------------------------------------------------

def cmd_fit(args):
    ds = load_panel(args)
    est = est_from_args(args)
    res = analyze(ds, est, args.seed, workers=args.threads)
    _emit(dumps(fit_report(res, ds, est, args.seed, timestamp=args.timestamp)), args.out)
    if args.csv_curve:
        Path(args.csv_curve).write_text(curve_csv_text(res), encoding="utf-8")


def cmd_test(args):
    ds = load_panel(args)
    wald = args.method == "wald"
    est = est_from_args(args, band=False, sup_tests=not wald, wald_tests=wald)
    res = analyze(ds, est, args.seed, workers=args.threads)
    report = {"method": args.method, "provenance": provenance(ds, est, args.seed)}
    if wald:
        report["tests"] = tests_block(res)
    else:
        report["sup_tests"] = {k: v.as_dict() for k, v in res.sup.items()}
        if est.M < 100:
            report["warning"] = f"low M={est.M}: bootstrap p-values have resolution 1/{est.M}"
    _emit(dumps(report), args.out)


def cmd_band(args):
    ds = load_panel(args)
    est = est_from_args(args, sup_tests=False, wald_tests=False)
    res = analyze(ds, est, args.seed, workers=args.threads)
    rep = fit_report(res, ds, est, args.seed)
    _emit(dumps({"curve": rep["curve"], "provenance": rep["provenance"]}), args.out)
    if args.csv_curve:
        Path(args.csv_curve).write_text(curve_csv_text(res), encoding="utf-8")


def cmd_simulate(args):
    if not args.out:
        raise ConfigError("--out is required")
    cfg = sim_from_args(args, args.seed)
    ds, truth = generate(cfg)
    if args.two_party:
        ds = as_two_party(ds)
    to_csv(ds, args.out)
    truth_path = args.truth or f"{args.out}.truth.json"
    Path(truth_path).write_text(dumps({**truth.as_dict(), "digest": ds.digest()}), encoding="utf-8")


def cmd_mc(args):
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    cfg = sim_from_args(args, 0)
    est = est_from_args(args, sup_tests=not args.no_sup)
    if args.emit_data:
        Path(args.emit_data).mkdir(parents=True, exist_ok=True)
    report = monte_carlo(cfg, est, args.reps, args.seed, workers=args.threads,
                         emit_dir=args.emit_data)
    _emit(dumps(report), args.out)


COMMANDS = {"fit": cmd_fit, "test": cmd_test, "band": cmd_band, "simulate": cmd_simulate,
            "mc": cmd_mc}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args)
    except FlipDMLError as e:
        err = {"error": e.kind, "message": str(e), "exit_code": e.exit_code}
        if hasattr(e, "rep"):
            err.update(rep=e.rep, cause=e.cause.kind)
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
