"""Command-line entry point: ``aqmsim run | validate | list-scenarios``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import list_scenarios, load_scenario
from .experiment import run_experiment
from .qdisc import KINDS
from .topology import ConfigError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aqmsim", description="PIE / FQ-PIE streaming QoE simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seeded samples of a scenario")
    run.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    run.add_argument("--qdisc", choices=KINDS)
    run.add_argument("--target-ms", type=float)
    run.add_argument("--samples", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default="out")
    run.add_argument("--horizon-s", type=float)
    run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("--scenario", required=True)

    sub.add_parser("list-scenarios", help="list bundled scenarios")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-scenarios":
        for name in list_scenarios():
            print(name)
        return EXIT_OK
    try:
        cfg = load_scenario(args.scenario)
        if args.command == "validate":
            print(f"{args.scenario}: ok ({len(cfg.nodes)} nodes, {len(cfg.links)} links, digest {cfg.digest()[:12]})")
            return EXIT_OK
        cfg = cfg.with_overrides(
            qdisc=args.qdisc,
            target=args.target_ms / 1e3 if args.target_ms is not None else None,
            samples=args.samples, seed=args.seed, horizon=args.horizon_s)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        report = run_experiment(cfg, args.out, jobs=args.jobs)
    except Exception as exc:  # noqa: BLE001 - any crash is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if report.failed:
        for r in report.failed:
            print(f"sample {r.sample} (seed {r.seed}) failed: {r.error}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(report.results)} samples to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
