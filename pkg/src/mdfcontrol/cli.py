"""Command-line front end.

    mdfcontrol test            run a procedure on a CSV of p-values
    mdfcontrol simulate        Monte Carlo FWER/FDR check from a TOML/JSON config
    mdfcontrol optimize        build a power-optimal tabulated size family
    mdfcontrol validate-sizes  check conditions A1-A4 of a size family

Exit codes: 0 success, 1 parse error, 2 invalid config, 3 bound check failed,
4 optimizer failure, 5 validation failure. Flags override config-file values;
the seed falls back to ``$MDF_SEED`` when neither gives one.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .optsize import OptimizerError, RepairError, RocModel, build_optimal_family, default_grid
from .procedures import PROCEDURES, reject
from .pvalues import BatteryParseError, read_battery_csv
from .simlab import ConfigError, SimConfig, run_experiment, tomllib
from .sizefam import load_family, validate_family

log = logging.getLogger("mdfcontrol")

EXIT_OK, EXIT_PARSE, EXIT_CONFIG, EXIT_BOUND, EXIT_OPTIMIZER, EXIT_VALIDATION = 0, 1, 2, 3, 4, 5

PLOT_Q_GRID = np.round(np.arange(1, 251) * 0.001, 3)


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _dump(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _read_mapping(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_CONFIG) from None
    try:
        return tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_CONFIG) from None


def _seed(flag, fallback=None):
    if flag is not None:
        return flag
    if fallback is not None:
        return fallback
    env = os.environ.get("MDF_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"MDF_SEED={env!r} is not an integer", EXIT_CONFIG) from None
    return 0


def _q(value):
    if value is not None and not 0.0 <= value <= 1.0:
        raise CliError(f"--q must lie in [0, 1], got {value}", EXIT_CONFIG)
    return value


# --- subcommands -----------------------------------------------------------------


def cmd_test(args):
    q = _q(args.q if args.q is not None else 0.05)
    try:
        battery = read_battery_csv(args.input, seed=_seed(args.seed))
    except BatteryParseError as exc:
        raise CliError(str(exc), EXIT_PARSE) from None
    try:
        fam = load_family(args.sizes, battery.M)
        if fam.M != battery.M:
            raise ValueError(f"size family has M={fam.M} but the battery has {battery.M} tests")
        outcome = reject(battery, fam, q, args.procedure)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    _dump(outcome.to_dict(), args.output)
    if args.emit_plot_data:
        plot_path = args.plot_output
        if plot_path is None:
            if args.output in (None, "-"):
                raise CliError("--emit-plot-data needs --output or --plot-output", EXIT_CONFIG)
            out = Path(args.output)
            plot_path = out.with_name(out.stem + "_curve.csv")
        with Path(plot_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["q", "J"])
            for qq in PLOT_Q_GRID:
                w.writerow([f"{qq:.3f}", reject(battery, fam, float(qq), args.procedure).J])
    log.info("%s at q=%g: %d of %d rejected", outcome.procedure, q, outcome.J, battery.M)
    return EXIT_OK


def cmd_simulate(args):
    if args.input is None:
        raise CliError("simulate needs --input CONFIG (.toml or .json)", EXIT_CONFIG)
    d = _read_mapping(args.input)
    if not isinstance(d, dict):
        raise CliError("simulation config must be a mapping", EXIT_CONFIG)
    if args.q is not None:
        d["q"] = _q(args.q)
    if args.procedure is not None:
        d["procedure"] = args.procedure
    if args.sizes is not None:
        try:
            d["size_family"] = load_family(args.sizes, d.get("M")).to_dict()
        except ValueError as exc:
            raise CliError(f"--sizes: {exc}", EXIT_CONFIG) from None
    if args.k_sigma is not None:
        d["k_sigma"] = args.k_sigma
    d["seed"] = _seed(args.seed, d.get("seed"))
    try:
        config = SimConfig.from_dict(d)
        result = run_experiment(config, workers=args.workers, per_replicate_csv=args.replicates_csv)
    except ConfigError as exc:
        raise CliError(f"refused: {exc}", EXIT_CONFIG) from None
    _dump(result.to_dict(), args.output)
    if not result.passed:
        log.warning("bound check failed: %s", result.rates)
        return EXIT_BOUND
    return EXIT_OK


def _parse_floats(text, what):
    try:
        return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise CliError(f"{what}: expected comma-separated numbers, got {text!r}", EXIT_CONFIG) from None


def cmd_optimize(args):
    d = _read_mapping(args.input) if args.input else {}
    thetas = _parse_floats(args.thetas, "--thetas") if args.thetas else d.get("thetas")
    if not thetas:
        raise CliError("optimize needs thetas (--thetas or 'thetas' in the config)", EXIT_CONFIG)
    if args.grid_size is not None:
        grid = np.linspace(0.01, 0.99, args.grid_size)
    elif "grid" in d:
        grid = np.asarray(d["grid"], dtype=float)
    elif "grid_size" in d:
        grid = np.linspace(0.01, 0.99, int(d["grid_size"]))
    else:
        grid = default_grid()
    budget = args.repair_budget if args.repair_budget is not None else float(d.get("repair_budget", 1e-3))
    try:
        roc = RocModel(thetas)
        fam = build_optimal_family(roc, grid, repair_budget=budget)
    except (OptimizerError, RepairError) as exc:
        raise CliError(f"optimizer failed: {exc}", EXIT_OPTIMIZER) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    report = validate_family(fam)
    _dump(fam.to_dict(), args.output)
    report_doc = {"thetas": list(roc.thetas), "validation": report.to_dict()}
    if args.report:
        _dump(report_doc, args.report)
    elif args.output not in (None, "-"):
        out = Path(args.output)
        _dump(report_doc, out.with_name(out.stem + ".validation.json"))
    else:
        sys.stderr.write(json.dumps(report_doc, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_validate(args):
    source = args.input if args.input is not None else args.sizes
    if source is None:
        raise CliError("validate-sizes needs --input FAMILY.json", EXIT_CONFIG)
    try:
        fam = load_family(source, args.m)
        report = validate_family(fam, grid_size=args.grid_size, k_max=args.k_max, tol=args.tol)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"malformed size family: {exc}", EXIT_CONFIG) from None
    _dump({"family": fam.to_dict(), "validation": report.to_dict()}, args.output)
    return EXIT_OK if report.ok else EXIT_VALIDATION


# --- parser ------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", "-i", help="input file")
    common.add_argument("--output", "-o", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, help="RNG seed (fallback: $MDF_SEED)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mdfcontrol", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", parents=[common], help="run a procedure on a p-value CSV (id,p[,z])")
    p.add_argument("--q", type=float, help="target level (default 0.05)")
    p.add_argument("--procedure", choices=PROCEDURES, default="star")
    p.add_argument("--sizes", default="sidak", help="builtin name (sidak, bonferroni), JSON text or JSON file")
    p.add_argument("--emit-plot-data", action="store_true", help="also write J(q) for q = 0.001..0.25")
    p.add_argument("--plot-output", help="path for the J(q) CSV (default: <output>_curve.csv)")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo certification run")
    p.add_argument("--q", type=float)
    p.add_argument("--procedure", choices=PROCEDURES)
    p.add_argument("--sizes")
    p.add_argument("--k-sigma", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--replicates-csv", help="write per-replicate s0,s,fdp,missed_prop here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", parents=[common], help="build a power-optimal size family")
    p.add_argument("--thetas", help="comma-separated mean shifts of the alternative")
    p.add_argument("--grid-size", type=int, help="number of budgets in (0.01, 0.99)")
    p.add_argument("--repair-budget", type=float)
    p.add_argument("--report", help="path for the validation report")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("validate-sizes", parents=[common], help="check A1-A4 for a size family")
    p.add_argument("--sizes", help="alternative to --input: builtin name or JSON")
    p.add_argument("--m", type=int, help="battery size for builtin families")
    p.add_argument("--grid-size", type=int, default=1001)
    p.add_argument("--k-max", type=int)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
