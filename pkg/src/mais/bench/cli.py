"""Command-line entry point: ``mais run | list-targets | quadrature | budget``."""
from __future__ import annotations

import argparse
import sys

from ..core import ConfigError, MaisError, NoReference
from ..samplers import eval_budget
from ..targets import compute_reference, get_target, target_names, write_reference
from .config import load_experiment
from .harness import compute_mse, export_csv, group_by_point, reference_values, run_experiment, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _cmd_run(args) -> int:
    spec = load_experiment(args.config)
    if args.seed is not None:
        spec.master_seed = args.seed
    if args.reps is not None:
        if args.reps < 1:
            raise ConfigError("--reps must be >= 1")
        spec.replications = args.reps
    records = run_experiment(spec, jobs=args.jobs)
    dim = spec.target_model().dim
    if args.out:
        export_csv(records, args.out, dim=dim)
        print(f"wrote {len(records)} records to {args.out}", file=sys.stderr)
    else:
        write_csv(records, sys.stdout, dim=dim)
    try:
        ref_mean, ref_Z = reference_values(spec)
    except NoReference as exc:
        print(f"no reference for MSE summary: {exc}", file=sys.stderr)
        return EXIT_OK
    for key, recs in group_by_point(records).items():
        s = compute_mse(recs, ref_mean, ref_Z)
        alg, N, M, T, sigma, lam, scheme, adapt = key
        z = "NA" if s.mse_Z is None else f"{s.mse_Z:.4g}"
        print(f"{alg} N={N} M={M} T={T} sigma={sigma} lambda={lam} {scheme}/{adapt}: "
              f"MSE={s.mean_mse:.4g} (components {', '.join(f'{v:.4g}' for v in s.mse)}) "
              f"MSE_Z={z} reps={s.count}", file=sys.stderr)
    return EXIT_OK


def _cmd_list(args) -> int:
    print("name\tdim\treference\tdescription")
    for name in target_names():
        t = get_target(name)
        ref = "yes" if t.reference_mean is not None else "no"
        print(f"{name}\t{t.dim}\t{ref}\t{t.description}")
    return EXIT_OK


def _cmd_quadrature(args) -> int:
    try:
        target = get_target(args.target)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    mean, Z = compute_reference(target)
    write_reference(target, mean, Z, args.out)
    print(f"{target.name}: mean={list(map(float, mean))} Z={Z} -> {args.out}")
    return EXIT_OK


def _cmd_budget(args) -> int:
    spec = load_experiment(args.config)
    for point in spec.points():
        cfg = spec.build_config(point, spec.master_seed)
        print(f"{cfg.algorithm} N={cfg.N} M={cfg.M} T={cfg.T} "
              f"adaptation={cfg.adaptation.variant}: E={eval_budget(cfg)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mais", description="Markov adaptive importance sampling benchmarks")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a replicated experiment and write CSV")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--reps", type=int)
    r.add_argument("--out")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=_cmd_run)

    ls = sub.add_parser("list-targets", help="list the registered targets")
    ls.set_defaults(func=_cmd_list)

    q = sub.add_parser("quadrature", help="compute and cache reference values by quadrature")
    q.add_argument("--target", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=_cmd_quadrature)

    b = sub.add_parser("budget", help="print the evaluation budget of each sweep point")
    b.add_argument("--config", required=True)
    b.set_defaults(func=_cmd_budget)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MaisError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
