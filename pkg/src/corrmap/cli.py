"""Command-line front end: run experiments and list built-ins."""

from __future__ import annotations

import argparse
import sys

from corrmap.experiment import ConfigError, builtin_descriptions, run_experiment
from corrmap.gp import NumericalError
from corrmap.ode import StiffnessError
from corrmap.pipeline import SimulationError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrmap",
        description="Learn correction maps between detailed and reduced "
                    "model statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config file")
    run.add_argument("config", help="path to the experiment .cfg file")
    run.add_argument("--seed", type=int, default=None,
                     help="override the config's seed")
    run.add_argument("--threads", type=int, default=1,
                     help="max worker processes for ensemble simulation")
    run.add_argument("--out-dir", default=None,
                     help="override the config's output directory")
    run.add_argument("--paper-faithful", action="store_true",
                     help="coarse legacy ODE solver settings "
                          "(all tolerance/step parameters 0.01)")

    sub.add_parser("list-builtins",
                   help="show built-in models and statistics")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "list-builtins":
        print(builtin_descriptions())
        return 0
    try:
        out = run_experiment(
            args.config,
            seed=args.seed,
            out_dir=args.out_dir,
            threads=max(1, args.threads),
            paper_faithful=args.paper_faithful,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, NumericalError, StiffnessError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
