"""``dtc`` command line: equilibrium, run, verify, sweep, acyclicity.

Exit codes: 0 success (converged / holds), 1 usage or parse error,
2 verification failed or run not converged, 3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .core_model import DTCError
from .dynamics import FIXATION, NAIVE, DynamicsInvariantError
from .harness import EXIT_INVARIANT, EXIT_USAGE, UsageError
from .verification import PathConstructionError


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")


def _add_dynamics(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dynamics", choices=(NAIVE, FIXATION))
    p.add_argument("--initial", help="equilibrium | special | uniform | file:PATH")
    p.add_argument("--max-days", type=int)
    p.add_argument("--snapshot-days", help="comma-separated days, default 1,500,900")
    p.add_argument("--stuck-threshold", type=int)
    p.add_argument("--max-candidates", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtc", description="Atomic departure-time choice game on a bottleneck.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("equilibrium", help="closed-form equilibrium profile and constants")
    _add_common(p)

    p = sub.add_parser("run", help="simulate day-to-day dynamics")
    _add_common(p)
    _add_dynamics(p)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("verify", help="exhaustive epsilon-Nash check of a profile file")
    p.add_argument("profile", type=Path, help="CSV with user and departure columns")
    _add_common(p, out_required=False)
    p.add_argument("--epsilon", help="tolerance, default m(1+gamma)/mu")

    p = sub.add_parser("sweep", help="run many seeds / parameter cells concurrently")
    _add_common(p)
    _add_dynamics(p)
    p.add_argument("--seeds", help="comma list or a..b range, default the config's seed")
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                   help="sweep a game parameter over values (repeatable)")
    p.add_argument("--workers", type=int, help="worker processes")

    p = sub.add_parser("acyclicity", help="exhaustive better-response graph of a tiny config")
    _add_common(p)
    p.add_argument("--node-budget", type=int, default=10**6)
    p.add_argument("--edges", action="store_true", help="also write edges.txt")
    return parser


def _values(args: argparse.Namespace) -> dict[str, str]:
    values = harness.load_values(args.config)
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key == "num_users":
            values.pop("total_mass", None)
        elif key == "total_mass":
            values.pop("num_users", None)
        values[key] = value
    flags = {
        "dynamics": "dynamics",
        "initial": "initial",
        "max_days": "max_days",
        "snapshot_days": "snapshot_days",
        "stuck_threshold": "stuck_threshold",
        "max_candidates": "max_candidates",
        "seed": "seed",
        "epsilon": "epsilon",
    }
    for attr, key in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            values[key] = str(value)
    return values


def _dispatch(args: argparse.Namespace) -> tuple[int, str]:
    values = _values(args)
    if args.command == "sweep":
        base = dict(values)
        seeds_spec = args.seeds if args.seeds is not None else base.pop("seeds", base.get("seed", "0"))
        base.pop("seeds", None)
        exp = harness.experiment_from_values(base)
        grid: dict[str, list[str]] = {}
        for item in args.grid:
            if "=" not in item:
                raise UsageError(f"--grid expects KEY=V1,V2, got {item!r}")
            key, vals = item.split("=", 1)
            grid[key.strip()] = [v.strip() for v in vals.split(",") if v.strip()]
        seeds = harness.parse_int_list("seeds", seeds_spec)
        cells = harness.sweep_cells(exp, seeds, grid, base)
        return harness.cmd_sweep(cells, args.out, args.workers)
    exp = harness.experiment_from_values(values)
    if args.command == "equilibrium":
        return harness.cmd_equilibrium(exp, args.out)
    if args.command == "run":
        return harness.cmd_run(exp, args.out)
    if args.command == "verify":
        return harness.cmd_verify(exp, args.profile, args.out)
    return harness.cmd_acyclicity(exp, args.out, args.node_budget, args.edges)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        code, text = _dispatch(args)
    except UsageError as exc:
        print(f"dtc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DynamicsInvariantError, PathConstructionError) as exc:
        print(f"dtc: invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except DTCError as exc:
        print(f"dtc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    stream = sys.stdout if code in (0, 2) else sys.stderr
    stream.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
