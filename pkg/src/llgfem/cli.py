"""Command-line entry point ``llgfem``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (the
failing step index is printed on stderr).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import COMMANDS, ConfigError, StudyConfig, TauRule, load_config, parse_values
from .integrators import SCHEMES, SimulationError
from .linsolve import LinearSolveError, _METHODS
from .problems import PROBLEMS

__all__ = ["main", "build_parser", "config_from_args"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("llgfem")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _rules(text):
    try:
        return tuple(TauRule.parse(x) for x in text.split(",") if x.strip())
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _schemes(text):
    out = tuple(x.strip().upper() for x in text.split(",") if x.strip())
    bad = [s for s in out if s not in SCHEMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown scheme(s) {bad}; choose from {SCHEMES}")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style study config; command-line flags override it")
    common.add_argument("--problem", choices=sorted(PROBLEMS))
    common.add_argument("--scheme", dest="schemes", type=_schemes, help="one scheme or a comma list (BDF2, TPS, MID)")
    common.add_argument("--level", type=_ints, help="mesh level, or a comma list of levels")
    common.add_argument("--pattern", choices=("diagonal", "crisscross"))
    common.add_argument("--tau", dest="taus", type=_floats, help="time step, or a comma-separated ladder")
    common.add_argument("--tau-rule", dest="tau_rules", type=_rules, help="tau as a function of h, e.g. 'h/10,h^2/10'")
    common.add_argument("--steps", type=int, help="number of time steps (overrides --tau for run)")
    common.add_argument("--alpha", type=float)
    common.add_argument("--lambda-sq", dest="lambda_sq", type=float)
    common.add_argument("--final-time", dest="final_time", type=float)
    common.add_argument("--time-grid", dest="time_grid", choices=("fit", "truncate", "nearest"))
    common.add_argument("--tps-field", dest="tps_field", choices=("next", "current"))
    common.add_argument("--out")
    common.add_argument("--jobs", type=int)
    common.add_argument("--full", action="store_true", default=None, help="use the full-size ladders")
    common.add_argument("--seed", type=int)
    common.add_argument("--solver", choices=_METHODS)
    common.add_argument("--solver-tol", dest="solver_tol", type=float)
    common.add_argument("--solver-maxit", dest="solver_maxit", type=int)
    common.add_argument("--fp-tol", dest="fp_tolerance", type=float)
    common.add_argument("--fp-maxit", dest="fp_max_iterations", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="llgfem", description="Tangent-plane finite element solver for the LLG equation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "run": "single trajectory with per-step CSV",
        "conv-time": "convergence under time-step bisection",
        "conv-space": "convergence under mesh refinement",
        "constraint": "unit-length deviation and regularity diagnostics",
        "cfl": "decay of C(tau) for tau tied to h",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def config_from_args(args: argparse.Namespace) -> StudyConfig:
    values = load_config(args.config) if args.config else {}
    values["command"] = args.command
    ns = vars(args)
    for key in (
        "problem", "schemes", "pattern", "taus", "tau_rules", "steps", "alpha", "lambda_sq",
        "final_time", "time_grid", "tps_field", "out", "jobs", "full", "seed", "solver",
        "solver_tol", "solver_maxit", "fp_tolerance", "fp_max_iterations",
    ):
        if ns.get(key) is not None:
            values[key] = ns[key]
    if args.level is not None:
        if len(args.level) == 1:
            values["level"] = args.level[0]
            values.pop("levels", None)
        else:
            values["levels"] = args.level
            values.pop("level", None)
    return StudyConfig(**values)


def main(argv=None) -> int:
    from .experiments import COMMAND_TABLE

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        cfg = config_from_args(args)
        result = COMMAND_TABLE[cfg.command](cfg)
    except ConfigError as exc:
        print(f"llgfem: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"llgfem: numerical failure at step {exc.step}: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LinearSolveError as exc:
        print(f"llgfem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if cfg.command == "run":
        s = result["summary"]
        print(
            f"{s['scheme']} N={s['N']} tau={s['tau']:.6g} final energy {s['final_energy']:.10g}; "
            f"output in {cfg.out}"
        )
    else:
        print(f"{cfg.command} finished; output in {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
