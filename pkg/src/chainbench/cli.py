"""``chainbench`` command line: run, sweep and verify."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .environments import InvalidSpec
from .harness import ConfigError, HarnessIOError, TooLarge, emit_csv, load_config, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PROPERTY = 2
EXIT_IO = 3


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed, replicates=args.replicates)
    result = run_experiment(cfg)
    emit_csv(result.traces, args.out)
    final = sum(t.final_regret for t in result.traces) / len(result.traces)
    print(f"{cfg.algorithm}: T={cfg.horizon} replicates={cfg.replicates} mean final regret {final:.4f} -> {args.out}")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    try:
        horizons = [int(h) for h in args.horizons.split(",") if h.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad horizon list {args.horizons!r}") from exc
    if not horizons:
        raise ConfigError("empty horizon list")
    base = load_config(args.config).with_overrides(seed=args.seed, replicates=args.replicates)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise HarnessIOError(f"cannot create {out}: {exc}") from exc
    for T in horizons:
        cfg = base.with_overrides(horizon=T)
        result = run_experiment(cfg)
        path = emit_csv(result.traces, out / f"regret_T{T}.csv")
        final = sum(t.final_regret for t in result.traces) / len(result.traces)
        print(f"T={T}: mean final regret {final:.4f} -> {path}")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    from .verify import run_checks

    failed = 0
    for name, ok, detail in run_checks(args.seed or 0):
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return EXIT_PROPERTY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write a regret CSV")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--replicates", type=int)
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="run one experiment per horizon")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--horizons", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--replicates", type=int)
    sweep.set_defaults(func=_cmd_sweep)

    verify = sub.add_parser("verify", help="run the invariant and property checks")
    verify.add_argument("--seed", type=int)
    verify.set_defaults(func=_cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage, which would read as a property failure
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, InvalidSpec, TooLarge) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HarnessIOError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
