"""Command-line experiment runner.

Usage: ``ganmanifold <subcommand> [--config FILE] [--seed N] [--out DIR] [--quiet]``

Exit status: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import (CheckpointError, ConfigError, DatasetFormatError, DivergenceError,
                      NonFiniteError, ShapeError)
from .commands import COMMANDS, run
from .config import ExperimentConfig, PRESETS, load_config, parse_config

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ganmanifold", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="experiment INI file (defaults apply when omitted)")
    parser.add_argument("--preset", choices=sorted(PRESETS),
                        help="start from a built-in preset instead of a file")
    parser.add_argument("--seed", type=int, help="run this single seed instead of the config's")
    parser.add_argument("--out", help="output directory (overrides experiment.output_dir)")
    parser.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config(f"[experiment]\npreset = {args.preset}\n" if args.preset else "")
    if args.seed is not None:
        cfg = cfg.with_values("experiment", seeds=(args.seed,))
    if args.out:
        cfg = cfg.with_values("experiment", output_dir=args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve_config(args)
        run(cfg, args.command, Path(cfg.experiment.output_dir))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ShapeError as exc:
        print(f"dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NonFiniteError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, CheckpointError, DatasetFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
