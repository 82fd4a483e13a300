"""
Command line front end.

    python -m refract.main scale    --model bm1.json --q 2 --xmax 5 --points 50
    python -m refract.main lt       --model cl1.json --theta 0.5 2 --lo -2 --hi 2
    python -m refract.main density  --model cl1.json
    python -m refract.main simulate --model cl1.json --theta 0.5 --lo -2 --hi 2 --n 100000
    python -m refract.main validate --config model/fixtures.json --seed 7

Tables go to stdout (or --output) as CSV, estimates and reports as JSON.
Exit status: 0 on success, 1 when validation fails or a computation breaks
down, 2 for configuration and usage errors.
"""

import argparse
import logging
import math
import sys
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from refract import __version__
from refract.config import DEFAULT_FIXTURES, setup_logging
from refract.errors import DomainError, ModelConfigError, RefractError, UnsupportedBackendError
from refract.fixture_manager import FixtureManager, load_model
from refract.occupation import BOTH, DOWN, TOTAL, UP, OccupationQuery, laplace_transform, occupation_density
from refract.scale_functions import BACKENDS, ScaleFunctionSet
from refract.simulator import DEFAULT_STEP, EXACT, SCHEMES, estimate_from_paths, mc_laplace, simulate_paths
from refract.validation import load_config, run_validation

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        with open(output, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _emit_plot_data(path: Optional[str], x, y) -> None:
    if path:
        pd.DataFrame({"x": x, "y": y}).to_csv(path, index=False)


def _window(args) -> tuple:
    lo = -math.inf if args.lo is None else args.lo
    hi = math.inf if args.hi is None else args.hi
    which = getattr(args, "which", None)
    if which == UP:
        if not math.isfinite(hi):
            raise DomainError("--which up needs --hi")
        lo = -math.inf
    elif which == DOWN:
        if not math.isfinite(lo):
            raise DomainError("--which down needs --lo")
        hi = math.inf
    elif which == TOTAL:
        lo, hi = -math.inf, math.inf
    elif which == BOTH and not (math.isfinite(lo) and math.isfinite(hi)):
        raise DomainError("--which both needs --lo and --hi")
    return lo, hi


# Subcommands


def cmd_scale(args) -> int:
    model = load_model(args.model)
    process = model.x_model if args.process == "x" else model.y_model
    scale = ScaleFunctionSet(process, args.q, backend=args.backend)
    xs = np.linspace(0.0, args.xmax, args.points + 1)
    table = scale.tabulate(xs)
    _emit(table.to_csv(index=False, float_format="%.12g"), args.output)
    _emit_plot_data(args.emit_plot_data, table["x"], table["w"])
    return EXIT_OK


def cmd_lt(args) -> int:
    model = load_model(args.model)
    lo, hi = _window(args)
    rows = []
    for theta in args.theta:
        result = laplace_transform(model, OccupationQuery(theta=theta, lo=lo, hi=hi), backend=args.backend)
        rows.append({"theta": theta, **result.model_dump()})
    table = pd.DataFrame(rows, columns=["theta", "value", "numerator", "denominator", "quad_error"])
    _emit(table.to_csv(index=False, float_format="%.12g"), args.output)
    _emit_plot_data(args.emit_plot_data, table["theta"], table["value"])
    return EXIT_OK


def cmd_density(args) -> int:
    model = load_model(args.model)
    grid = None
    if args.xmax is not None:
        grid = np.linspace(0.0, args.xmax, args.points + 1)[1:]
    result = occupation_density(model, grid=grid, n_terms=args.n_terms)
    table = result.to_frame()[["x", "density"]]
    header = f"# atom0={result.atom0:.12g}\n"
    _emit(header + table.to_csv(index=False, float_format="%.12g"), args.output)
    _emit_plot_data(args.emit_plot_data, result.grid, result.density)
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    lo, hi = _window(args)
    query = OccupationQuery(theta=args.theta, lo=lo, hi=hi)
    if args.paths_csv:
        paths, bias = simulate_paths(model, query, args.n, args.scheme, args.seed, args.h)
        paths[["occupation", "exit", "exit_time"]].to_csv(args.paths_csv, index=False)
        estimate = estimate_from_paths(paths, args.theta, args.seed, args.scheme, args.h, bias)
    else:
        estimate = mc_laplace(model, query, args.n, args.scheme, args.seed, args.h)
    _emit(estimate.model_dump_json(indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_validate(args) -> int:
    config = load_config(args.config)
    report = run_validation(config, seed=args.seed, fixtures=FixtureManager(args.config))
    _emit(report.model_dump_json(indent=2) + "\n", args.output)
    summary = report.summary
    logger.info("Validation: %d passed, %d failed", summary["passed"], summary["failed"])
    return EXIT_OK if report.all_passed else EXIT_FAILED


# Parser


def _add_window(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lo", type=float, help="lower barrier (omit for none)")
    parser.add_argument("--hi", type=float, help="upper barrier (omit for none)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refract", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    scale = sub.add_parser("scale", help="tabulate W, W' and Z")
    scale.add_argument("--model", required=True)
    scale.add_argument("--q", type=float, default=0.0)
    scale.add_argument("--xmax", type=float, default=5.0)
    scale.add_argument("--points", type=int, default=50, help="number of intervals on [0, xmax]")
    scale.add_argument("--process", choices=["x", "y"], default="x", help="X or Y = X - delta t")
    scale.add_argument("--backend", choices=BACKENDS)
    scale.add_argument("--output")
    scale.add_argument("--emit-plot-data", metavar="FILE")
    scale.set_defaults(handler=cmd_scale)

    lt = sub.add_parser("lt", help="occupation-time Laplace transforms")
    lt.add_argument("--model", required=True)
    lt.add_argument("--theta", type=float, nargs="+", required=True)
    _add_window(lt)
    lt.add_argument("--which", choices=[BOTH, UP, DOWN, TOTAL])
    lt.add_argument("--backend", choices=BACKENDS)
    lt.add_argument("--output")
    lt.add_argument("--emit-plot-data", metavar="FILE")
    lt.set_defaults(handler=cmd_lt)

    density = sub.add_parser("density", help="law of the total occupation time")
    density.add_argument("--model", required=True)
    density.add_argument("--xmax", type=float)
    density.add_argument("--points", type=int, default=400)
    density.add_argument("--n-terms", type=int, default=30)
    density.add_argument("--output")
    density.add_argument("--emit-plot-data", metavar="FILE")
    density.set_defaults(handler=cmd_density)

    simulate = sub.add_parser("simulate", help="Monte Carlo estimate")
    simulate.add_argument("--model", required=True)
    simulate.add_argument("--theta", type=float, required=True)
    _add_window(simulate)
    simulate.add_argument("--n", type=int, default=100_000)
    simulate.add_argument("--scheme", choices=SCHEMES, default=EXACT)
    simulate.add_argument("--h", type=float, default=DEFAULT_STEP)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--paths-csv", metavar="FILE")
    simulate.add_argument("--output")
    simulate.set_defaults(handler=cmd_simulate)

    validate = sub.add_parser("validate", help="analytic vs Monte Carlo report")
    validate.add_argument("--config", default=DEFAULT_FIXTURES)
    validate.add_argument("--seed", type=int)
    validate.add_argument("--output")
    validate.set_defaults(handler=cmd_validate)
    return parser


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging({1: "INFO"}.get(args.verbose, "DEBUG") if args.verbose else None)

    # Global exception handler
    try:
        return args.handler(args)
    except (ModelConfigError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, UnsupportedBackendError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RefractError as e:
        logger.debug("Computation failed", exc_info=True)
        print(f"computation failed: {e}", file=sys.stderr)
        return EXIT_FAILED
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(run_cli())
