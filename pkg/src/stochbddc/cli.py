"""Command line entry point: ``stochbddc [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import (ConfigError, emit_report, load_config, report_table, run_experiment,
                      sweep, write_residual_log)
from .krylov import BreakdownError
from .random_field import KLError
from .bddc import SPDError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("stochbddc")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochbddc",
                                description="Monte Carlo runs of deterministic and stochastic BDDC.")
    p.add_argument("--config", metavar="PATH", help="key = value file; flags override it")
    p.add_argument("--ns", type=int, help="subdomains per side")
    p.add_argument("--n", type=int, help="cells per subdomain side (H/h)")
    p.add_argument("--sigma2", type=float)
    p.add_argument("--ell", type=float, help="correlation length")
    p.add_argument("--mkl", type=int, help="global KL terms")
    p.add_argument("--nkl", type=int, help="local KL terms per subdomain")
    p.add_argument("--degree", type=int, help="PC degree d")
    p.add_argument("--quad", type=int, help="Gauss-Hermite points per dimension (SC)")
    p.add_argument("--method", choices=("exact", "mpc", "sg", "sc"))
    p.add_argument("--operator", choices=("exact", "surrogate"), dest="operator_mode")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--maxit", type=int)
    p.add_argument("--out", metavar="PATH", help="CSV output file")
    p.add_argument("--workers", type=int)
    p.add_argument("--fallback", action="store_true", default=None,
                   help="solve SPD-failure samples with the mean preconditioner")
    p.add_argument("--residual-log", metavar="PATH", help="JSON lines of residual histories")
    p.add_argument("--sweep", metavar="AXIS=V1,V2,...", help="run once per value of one parameter")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("config", "residual_log", "sweep", "verbose")}
    try:
        cfg = load_config(args.config, **overrides)
        axis, values = None, None
        if args.sweep:
            if "=" not in args.sweep:
                raise ConfigError("--sweep expects AXIS=V1,V2,...")
            axis, raw = args.sweep.split("=", 1)
            values = [v for v in raw.split(",") if v]
            if not values:
                raise ConfigError("--sweep needs at least one value")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        reports = sweep(cfg, axis, values) if axis else [run_experiment(cfg)]
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SPDError, KLError, BreakdownError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    for k, rep in enumerate(reports):
        log.info("offline %.2fs, %d samples, %d excluded", rep.offline_seconds,
                 len(rep.records), rep.excluded_count)
        if cfg.out:
            path = cfg.out if len(reports) == 1 else _indexed(cfg.out, k)
            emit_report(rep, "csv", path)
        if args.residual_log:
            path = args.residual_log if len(reports) == 1 else _indexed(args.residual_log, k)
            write_residual_log(rep, path)
    sys.stdout.write(report_table(reports))
    if any(rep.records and not rep.included for rep in reports):
        print("numerical failure: no sample converged with an SPD preconditioner", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _indexed(path: str, k: int) -> str:
    stem, dot, ext = path.rpartition(".")
    return f"{stem}_{k}.{ext}" if dot else f"{path}_{k}"


if __name__ == "__main__":
    sys.exit(main())
