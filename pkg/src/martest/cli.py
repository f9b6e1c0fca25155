"""Command-line interface.

Exit status is 0 on success, 1 for usage or input-file problems and 2 when
an estimator or the test itself fails. Errors are written to stderr as a
JSON object with a ``code`` field.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import DomainError, MarTestError, ParseError, SchemaError
from .glm import GlmFamily
from .hausman import SCHEMA_VERSION, run_test
from .io import InputSchema, dump_json, grid_to_csv, grid_to_records, read_dataset
from .ipw import solve_ipw
from .kernels import KernelConfig, ZMode
from .power import local_power
from .pseudolik import solve_pseudolik
from .simulation import FShape, Scenario, run_grid

USAGE_EXIT = 1
FAILURE_EXIT = 2
_INPUT_ERRORS = (ParseError, SchemaError)


class UsageError(Exception):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _probability(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _bandwidth_list(text: str):
    return "auto" if text == "auto" else tuple(_float_list(text))


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="CSV file with a header row")
    p.add_argument("--y-col", default="y")
    p.add_argument("--u-cols", default="u", help="comma-separated")
    p.add_argument("--z-cols", default="z", help="comma-separated")
    p.add_argument("--indicator-col", default=None, help="optional 0/1 column that must match the outcome pattern")
    p.add_argument("--family", choices=["gaussian", "bernoulli", "poisson"], default="gaussian")
    p.add_argument("--dispersion", type=_positive, default=1.0, help="known dispersion (gaussian only)")


def _add_kernel_args(p: argparse.ArgumentParser, z_mode: str) -> None:
    p.add_argument("--bandwidth-prop", default="auto", help="propensity bandwidth or 'auto'")
    p.add_argument("--bandwidth-kde", type=_bandwidth_list, default="auto",
                   help="one density bandwidth per u and z column, comma-separated, or 'auto'")
    p.add_argument("--quad-nodes", type=_positive_int, default=20)
    p.add_argument("--z-mode", choices=[m.value for m in ZMode], default=z_mode)


def _kernel_config(args) -> KernelConfig:
    b = args.bandwidth_prop
    if b != "auto":
        try:
            b = _positive(b)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"--bandwidth-prop: {exc}") from None
    try:
        return KernelConfig(
            propensity_bandwidth=b,
            kde_bandwidth=args.bandwidth_kde,
            quadrature_nodes=args.quad_nodes,
            z_mode=args.z_mode,
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def _load(args):
    schema = InputSchema(args.y_col, args.u_cols, args.z_cols, args.indicator_col)
    data = read_dataset(args.data, schema)
    if args.bandwidth_kde != "auto" and len(args.bandwidth_kde) not in (1, data.m):
        raise UsageError(f"--bandwidth-kde needs 1 or {data.m} values")
    return data, GlmFamily.from_name(args.family, args.dispersion)


def cmd_test(args) -> dict:
    config = _kernel_config(args)
    data, family = _load(args)
    res = run_test(data, family, config)
    out = res.to_dict()
    out["level"] = args.level
    out["reject"] = bool(res.p_value < args.level)
    return out


def cmd_fit(args) -> dict:
    config = _kernel_config(args)
    data, family = _load(args)
    if args.estimator == "ipw":
        fit = solve_ipw(data, family, config)
    else:
        fit = solve_pseudolik(data, family, config)
    return {
        "schema_version": SCHEMA_VERSION,
        "estimator": args.estimator,
        "beta": fit.beta.tolist(),
        "std_errors": fit.std_errors().tolist(),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "score_norm": fit.score_norm,
        "n": data.n,
        "n_complete": data.n_complete,
    }


def cmd_simulate(args) -> Optional[dict]:
    config = _kernel_config(args)
    scenarios = [
        Scenario(b_z=bz, c1=c1, c2=c2, f_shape=args.f_shape, n=args.n)
        for bz in args.bz
        for c2 in args.c2_list
        for c1 in args.c1_list
    ]
    rows = run_grid(scenarios, reps=args.reps, level=args.level, seed=args.seed, config=config, n_jobs=args.jobs)
    table = grid_to_csv(rows)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(table)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            dump_json({"schema_version": SCHEMA_VERSION, "level": args.level, "seed": args.seed, "cells": grid_to_records(rows)}, fh)
    if not args.out and not args.json_out:
        sys.stdout.write(table)
    for row in rows:
        status = f"FAILED ({row.error})" if row.error else f"{100 * row.rate:5.1f}% (se {100 * row.se:.1f})"
        print(f"f={row.f_shape} b_z={row.b_z:g} c2={row.c2:g} c1={row.c1:g} n={row.n}: {status}",
              file=sys.stdout if args.out or args.json_out else sys.stderr)
    return None


def cmd_power(args) -> dict:
    config = _kernel_config(args)
    sc = Scenario(b_z=args.bz, c1=args.c1, c2=args.c2, f_shape=args.f_shape, n=args.n)
    est = local_power(sc, gamma0=args.gamma0, level=args.level, n_cal=args.n_cal, seed=args.seed, config=config)
    out = est.to_dict()
    gamma0 = args.gamma0 if args.gamma0 is not None else [float(np.sqrt(sc.n) * sc.c1)]
    out.update(schema_version=SCHEMA_VERSION, level=args.level, gamma0=gamma0, n_cal=args.n_cal)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="martest", description="Test whether a GLM outcome is missing at random.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("test", help="run the MAR test on a CSV dataset")
    _add_data_args(p)
    _add_kernel_args(p, ZMode.MIXTURE.value)
    p.add_argument("--level", type=_probability, default=0.05)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("fit", help="fit one estimator")
    _add_data_args(p)
    _add_kernel_args(p, ZMode.MIXTURE.value)
    p.add_argument("--estimator", choices=["ipw", "pseudo"], default="pseudo")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="rejection rates over a scenario grid")
    p.add_argument("--f-shape", type=FShape.parse, default=FShape.LINEAR)
    p.add_argument("--bz", type=_float_list, default=[1.0], help="comma-separated instrument strengths")
    p.add_argument("--c1-list", type=_float_list, default=[0.0])
    p.add_argument("--c2-list", type=_float_list, default=[0.0])
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--reps", type=_positive_int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=_probability, default=0.05)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", help="write the grid as CSV here")
    p.add_argument("--json-out", help="write the grid, with sorted T values per cell, as JSON here")
    _add_kernel_args(p, ZMode.DEGENERATE.value)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", help="predicted local power for a simulation scenario")
    p.add_argument("--f-shape", type=FShape.parse, default=FShape.LINEAR)
    p.add_argument("--bz", type=float, default=1.0)
    p.add_argument("--c1", type=float, default=0.0)
    p.add_argument("--c2", type=float, default=0.0)
    p.add_argument("--gamma0", type=_float_list, default=None, help="overrides sqrt(n) * c1")
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--n-cal", type=_positive_int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=_probability, default=0.05)
    _add_kernel_args(p, ZMode.DEGENERATE.value)
    p.set_defaults(func=cmd_power)
    return parser


def _fail(code: str, message: str, status: int) -> int:
    print(json.dumps({"error": {"code": code, "message": message}}), file=sys.stderr)
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        out = args.func(args)
    except UsageError as exc:
        return _fail(UsageError.code, str(exc), USAGE_EXIT)
    except _INPUT_ERRORS as exc:
        return _fail(exc.code, str(exc), USAGE_EXIT)
    except OSError as exc:
        return _fail("io", str(exc), USAGE_EXIT)
    except MarTestError as exc:
        return _fail(exc.code, str(exc), FAILURE_EXIT)
    if out is not None:
        dump_json(out, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
