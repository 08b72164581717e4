"""Command-line entry point.

Exit codes: 0 success, 1 a reference target was missed, 2 configuration
error, 3 physics-domain error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__, atomic, harness
from .errors import ConfigError, SimulationError

EXIT_OK, EXIT_TARGET, EXIT_CONFIG, EXIT_PHYSICS = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ca43sim", description="43Ca+ clock-qubit experiment simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment descriptor")
    r.add_argument("id")
    r.add_argument("--config", help="YAML config file")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", help=f"output directory (default ${harness.OUT_ENV} or ./{harness.DEFAULT_OUT})")

    s = sub.add_parser("scan", help="repeat a descriptor over a parameter grid")
    s.add_argument("id")
    s.add_argument("--param", required=True,
                   help="experiment parameter, or noise.<field> / detection.<field>")
    s.add_argument("--grid", required=True, help="start:stop:count")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")

    v = sub.add_parser("validate", help="check a config file without running")
    v.add_argument("config")
    v.add_argument("--id", help="also check experiment parameters against this descriptor")

    sub.add_parser("list", help="list experiment descriptors")
    sub.add_parser("version", help="print package version and constants-file hash")
    return p


def _print_targets(targets):
    for t in targets:
        lo, hi = t.window
        mark = "PASS" if t.passed else "MISS"
        print(f"  {mark} {t.name}: {t.achieved:.6g} in [{lo:.6g}, {hi:.6g}] ({t.provenance})")


def _cmd_run(args) -> int:
    report = harness.run(args.id, args.config, args.seed, args.out)
    print(f"{args.id} seed={args.seed} wall={report.wall_time:.2f}s -> {harness.output_dir(args.out)}")
    _print_targets(report.targets)
    return EXIT_OK if report.passed else EXIT_TARGET


def _cmd_scan(args) -> int:
    grid = harness.parse_grid(args.grid)
    table, outcomes = harness.scan(args.id, args.param, grid, args.config, args.seed, args.out)
    missed = sum(not t.passed for o in outcomes for t in o.targets)
    print(f"{args.id}: {len(grid)} points, {len(table)} rows, {missed} target misses "
          f"-> {harness.output_dir(args.out)}")
    return EXIT_OK if missed == 0 else EXIT_TARGET


def _cmd_validate(args) -> int:
    harness.validate(args.config, args.id)
    print(f"{args.config}: ok")
    return EXIT_OK


def _cmd_list(args) -> int:
    for d in harness.descriptors():
        print(f"{d.id:26s} {d.summary}")
        for key, value in {**d.defaults, "shots": d.shots}.items():
            print(f"{'':28s}{key} = {value}")
    return EXIT_OK


def _cmd_version(args) -> int:
    consts = atomic.default_constants()
    print(f"ca43sim {__version__}")
    print(f"constants sha256 {consts.source_hash}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "scan": _cmd_scan, "validate": _cmd_validate, "list": _cmd_list,
            "version": _cmd_version}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS


if __name__ == "__main__":
    sys.exit(main())
