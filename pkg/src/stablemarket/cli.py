"""Command line entry point: ``stablemarket <subcommand> --config run.yaml``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .cli_io import (
    ENV_PREFIX,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    EXIT_VIOLATION,
    ConfigError,
    apply_overrides,
    load_config,
    run,
)
from .experiments import ExperimentConfig
from .model import ModelConfig

log = logging.getLogger("stablemarket")

SUBCOMMANDS = {
    "simulate": "draw markets and record SOSM statistics",
    "audit-bdc": "single-student perturbation audit of the bounded-difference bounds",
    "audit-equilibration": "remove/re-insert audit of the re-stabilisation operator",
    "concentration": "empirical tails of a matching statistic against the tail bound",
    "estimators": "consistency sweep for the CDF, sorting and kernel estimators",
    "rankdiff": "scaling of the maximum rank difference with n and sigma",
    "exchangeability": "first-half vs second-half per-student match frequencies",
    "example-fixtures": "replay the five-student worked market and print the comparison",
}


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stablemarket",
        description="Stable matching simulations and audits.",
        epilog=f"Environment overrides: {ENV_PREFIX}CONFIG, {ENV_PREFIX}SEED, {ENV_PREFIX}REPLICATIONS, "
        f"{ENV_PREFIX}THREADS, {ENV_PREFIX}OUT, {ENV_PREFIX}FORMAT (flags win over the environment).",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="YAML experiment config (required except for example-fixtures)")
        p.add_argument("--seed", type=_u64)
        p.add_argument("--out", help="output directory")
        p.add_argument("--replications", type=_positive)
        p.add_argument("--threads", type=_positive)
        p.add_argument("--format", choices=("csv", "jsonl", "both"))
    return parser


def _resolve_config(args) -> ExperimentConfig:
    path = args.config or os.environ.get(ENV_PREFIX + "CONFIG")
    if path is None:
        if args.command != "example-fixtures":
            raise ConfigError([f"--config is required for {args.command}"])
        config = ExperimentConfig(kind="example-fixtures", model=ModelConfig(n=5, m=3), replications=2)
    else:
        config = load_config(path)
    if config.kind != args.command:
        config = config.with_(kind=args.command)
    return apply_overrides(
        config, seed=args.seed, replications=args.replications, threads=args.threads, out=args.out, format=args.format
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _resolve_config(args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest, report = run(config)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("wrote %d files to %s in %.2fs", len(manifest.files), config.output_dir, manifest.runtime_s)
    if args.command == "example-fixtures":
        _print_table(report.summary)
    if report.violations:
        print(f"{report.violations} audit violation(s); see {config.output_dir}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def _print_table(rows: list[dict]) -> None:
    cols = ["case", "quotas", "sosm_base", "sosm_perturbed", "changed_students", "max_changes_per_college", "k"]
    widths = [max(len(c), *(len(str(r[c])) for r in rows)) for c in cols]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for r in rows:
        print("  ".join(str(r[c]).ljust(w) for c, w in zip(cols, widths)))


if __name__ == "__main__":
    sys.exit(main())
