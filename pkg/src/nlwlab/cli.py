"""Command line entry point: ``nlwlab <kind> --config c.yaml --seed 7 --out runs/a``.

Exit codes: 0 when the run's checks pass, 1 when they fail, 2 for a bad
configuration (nothing is written in that case).
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import KINDS, U64_MAX, parse_config
from .errors import ConfigurationError, ConvergenceError, DivergenceError, WeightCollapseError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlwlab", description="Large deviations lab for the stochastic damped wave equation")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", type=Path, default=None, help="YAML config file")
        p.add_argument("--seed", type=str, default=None, help="master seed (unsigned 64-bit); overrides the config")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--workers", type=int, default=1, help="worker processes for chunked ensembles")
    return ap


def _load(args) -> tuple:
    data = {}
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigurationError(f"config file not found: {args.config}")
        import yaml

        try:
            data = yaml.safe_load(args.config.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping")
    if data.get("kind", args.kind) != args.kind:
        raise ConfigurationError(f"config kind {data['kind']!r} does not match subcommand {args.kind!r}")
    data = {**data, "kind": args.kind}
    if args.seed is not None:
        try:
            seed = int(args.seed, 0)
        except ValueError:
            raise ConfigurationError(f"--seed must be an integer, got {args.seed!r}") from None
        if not 0 <= seed <= U64_MAX:
            raise ConfigurationError(f"--seed must be an unsigned 64-bit integer, got {seed}")
        data["seed"] = seed
    if args.workers < 1:
        raise ConfigurationError("--workers must be >= 1")
    return parse_config(data)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .outputs import write_run
    from .runner import run_experiment

    t0 = time.perf_counter()
    try:
        result = run_experiment(cfg, args.workers)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ConvergenceError, WeightCollapseError) as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    manifest = write_run(args.out, result, cfg.canonical(), cfg.digest(), cfg.seed, args.workers,
                         time.perf_counter() - t0)
    status = "PASS" if result.passed else "FAIL"
    print(f"{cfg.kind}: {status} ({manifest})")
    return EXIT_PASS if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
