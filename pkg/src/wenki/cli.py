"""Command-line entry point: ``wenki run|table|variance|oracle``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .ensemble import fmt
from .experiments import (
    VARIANCE_METHODS,
    ConfigError,
    ExperimentConfig,
    reproduce_table,
    run_experiment,
    weight_variance_report,
)
from .model import BUILTIN_PROBLEMS, builtin_problem
from .numkit import NumericalError
from .oracle import grid_moment, oracle, write_oracle_csv

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wenki", description="Weighted ensemble Kalman samplers and their reference oracle.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, default_out="out"):
        sp.add_argument("--out", default=None, help=f"output directory (default: {default_out})")
        sp.add_argument("--seed", type=int, default=None, help="run this single seed instead of the defaults")

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    common(r)

    t = sub.add_parser("table", help="moment-error table for example3 or example5")
    t.add_argument("--example", required=True, choices=["example3", "example5"])
    common(t)

    v = sub.add_parser("variance", help="log(Var(N w) + 1) series")
    v.add_argument("--example", required=True, choices=BUILTIN_PROBLEMS)
    v.add_argument("--methods", default=",".join(VARIANCE_METHODS), help="comma-separated subset of is,wenki,wensrf")
    v.add_argument("--n-particles", type=int, default=1000)
    v.add_argument("--dt", type=float, default=None)
    common(v)

    o = sub.add_parser("oracle", help="quadrature moments E|u|^k at tempering time t")
    o.add_argument("--example", required=True, choices=BUILTIN_PROBLEMS)
    o.add_argument("--t", type=float, default=1.0)
    o.add_argument("--k", default="1", help="moment order or comma-separated orders")
    common(o)
    return p


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    data = cfg.to_dict()
    if args.out is not None:
        data["output_dir"] = args.out
    if args.seed is not None:
        data["seeds"] = [args.seed]
    cfg = ExperimentConfig.from_dict(data)
    for path in run_experiment(cfg):
        print(path)
    return 0


def _cmd_table(args) -> int:
    seeds = [args.seed] if args.seed is not None else list(range(10))
    tables = reproduce_table(args.example, seeds=seeds, out=args.out or "out")
    print("method,k,oracle,estimate,relative_error")
    for method, tab in tables.items():
        for r in tab.rows:
            print(f"{method},{r.k},{fmt(r.oracle)},{fmt(r.estimate)},{fmt(r.relative_error)}")
    return 0


def _cmd_variance(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in VARIANCE_METHODS]
    if bad or not methods:
        raise ConfigError(f"methods must be a non-empty subset of {', '.join(VARIANCE_METHODS)}")
    rows = weight_variance_report(args.example, methods, args.n_particles, args.dt,
                                  seed=args.seed or 0, out=args.out or "out")
    final = {m: v for t, m, v in rows if t == 1.0}
    for m in methods:
        print(f"{m},log_var_plus_one_at_t1,{fmt(final[m])}")
    return 0


def _cmd_oracle(args) -> int:
    try:
        orders = [int(k) for k in args.k.split(",")]
    except ValueError:
        raise ConfigError(f"invalid moment order list {args.k!r}") from None
    if not 0.0 <= args.t <= 1.0:
        raise ConfigError("t must lie in [0, 1]")
    o = oracle(builtin_problem(args.example), args.t)
    rows = [(args.example, args.t, k, grid_moment(o, k)) for k in orders]
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    write_oracle_csv(out / f"{args.example}_oracle.csv", rows)
    print("example,t,k,value")
    for ex, t, k, v in rows:
        print(f"{ex},{fmt(t)},{k},{fmt(v)}")
    return 0


COMMANDS = {"run": _cmd_run, "table": _cmd_table, "variance": _cmd_variance, "oracle": _cmd_oracle}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
