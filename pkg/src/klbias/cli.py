"""Command-line entry point: ``klbias {run,sweep,grid,marginalize,q4}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import PRESETS, load_config
from .driver import (
    EXIT_CONFIG,
    EXIT_CONVERGED,
    EXIT_INTERRUPTED,
    EXIT_NUMERICAL,
    grid_from_model,
    run_single_temperature,
    run_temper_sweep,
)
from .exceptions import (
    ConfigError,
    ContractError,
    NumericalFailure,
    RunInterrupted,
    SingularConfigurationError,
    UndefinedOrderParameterError,
)
from .io import FreeEnergyGrid, integrate_grid
from .systems import LJClusterSystem, read_snapshot

log = logging.getLogger("klbias")


def _add_run_args(p):
    p.add_argument("--config", "-c", help="YAML or JSON run configuration")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
    p.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key by dotted path, e.g. descent.p=0.501")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")
    p.add_argument("--stop-after", type=int, default=None, metavar="N",
                   help="checkpoint and stop after N steps (exit code 5)")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")


def build_parser():
    ap = argparse.ArgumentParser(prog="klbias", description="Free-energy estimation with KL-optimal biasing")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize the bias at a single temperature")
    _add_run_args(p)
    p = sub.add_parser("sweep", help="optimize, then continue across temperatures (or spring stiffness)")
    _add_run_args(p)

    p = sub.add_parser("grid", help="evaluate a saved model on a grid")
    p.add_argument("model")
    p.add_argument("--points", type=int, default=None, help="points per axis")
    p.add_argument("--names", nargs="*", default=None, help="axis names for the header")
    p.add_argument("--out", "-o", required=True)

    p = sub.add_parser("marginalize", help="integrate a 2D grid over one axis")
    p.add_argument("grid")
    p.add_argument("--axis", type=int, default=1, help="axis to integrate out (default 1)")
    p.add_argument("--out", "-o", required=True)

    p = sub.add_parser("q4", help="Q4 order parameter of a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--cutoff", type=float, default=1.391, help="bond cutoff in length units")
    return ap


def _run(args, fn):
    cfg = load_config(args.config, args.preset, args.set)
    if args.print_config:
        sys.stdout.write(cfg.dumps())
        return EXIT_CONVERGED
    res = fn(cfg, resume=args.resume, stop_after=args.stop_after)
    print(f"{res.status}: K={res.model.n_kernels}, outputs in {res.out_dir}")
    return res.exit_code


def _q4(args):
    pos, box = read_snapshot(args.snapshot)
    if box is not None:
        raise ContractError("Q4 is defined for free clusters; snapshot has a periodic box")
    if pos.shape[1] != 3:
        raise ContractError("Q4 needs three-dimensional coordinates")
    cluster = LJClusterSystem(pos.shape[0], 3, cv="q4", q4_cutoff=args.cutoff)
    q4, _ = cluster.q4(pos.reshape(-1), grad=False)
    print(repr(float(q4)))
    return EXIT_CONVERGED


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _run(args, run_single_temperature)
        if args.command == "sweep":
            return _run(args, run_temper_sweep)
        if args.command == "grid":
            grid_from_model(args.model, args.points, args.names).write(args.out)
            return EXIT_CONVERGED
        if args.command == "marginalize":
            integrate_grid(FreeEnergyGrid.read(args.grid), args.axis).write(args.out)
            return EXIT_CONVERGED
        if args.command == "q4":
            return _q4(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunInterrupted as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INTERRUPTED
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ContractError, SingularConfigurationError, UndefinedOrderParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
