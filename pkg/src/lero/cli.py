"""Command-line entry point: ``python -m lero {run,report,validate-candidate,replay-check}``."""

from __future__ import annotations

import argparse
import filecmp
import json
import logging
import sys
import tempfile
from pathlib import Path

from lero import particle_env as pe
from lero.candidates.engine import Kind, parse_candidate, validate
from lero.experiment import (
    ALGORITHMS,
    EXIT_CONFIG,
    EXIT_OK,
    MODES,
    SCENARIOS,
    ConfigError,
    load_config,
    report,
    resolve_config,
    run,
)

EXIT_INVALID = 1


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    p.add_argument("--mode", choices=[m for m in MODES] + [m.upper() for m in MODES])
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--seed", type=int)
    p.add_argument("--provider", help="live, replay:PATH or scripted:PATH")
    p.add_argument("--out", help="output directory (one sub-directory per run)")
    p.add_argument("--steps", type=int, help="override total_env_steps")
    p.add_argument("--fresh", action="store_true", help="ignore completed rounds instead of resuming")


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "mode": args.mode.lower() if args.mode else None,
        "scenario": args.scenario,
        "algorithm": args.algo,
        "seed": args.seed,
        "provider": args.provider,
        "out_dir": args.out,
        "total_env_steps": args.steps,
    }


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config, _overrides(args))
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run(config, resume=not args.fresh)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if result.message:
        print(result.message, file=sys.stderr)
    cov = "n/a" if result.coverage_rate is None else f"{result.coverage_rate:.4f}"
    print(f"{result.run_dir}: coverage_rate {cov}")
    return result.status


def cmd_report(args: argparse.Namespace) -> int:
    try:
        table = report(args.runs)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    print(table.to_text(), end="")
    if args.csv:
        Path(args.csv).write_text(table.to_csv())
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    source = Path(args.path).read_text()
    kind = Kind(args.kind) if args.kind else (Kind.OEF if "fn enhance" in source else Kind.HRF)
    config = pe.ScenarioConfig.make(args.scenario, args.n_agents, args.n_landmarks)
    cand = validate(parse_candidate(source, kind, id=Path(args.path).name), config, history_depth=args.history_depth)
    print(json.dumps(cand.summary(), indent=2, sort_keys=True))
    return EXIT_OK if cand.valid else EXIT_INVALID


def cmd_replay_check(args: argparse.Namespace) -> int:
    """Re-run a finished run from its own recording and compare artifacts byte for byte."""
    run_dir = Path(args.run_dir)
    resolved = json.loads((run_dir / "config.resolved.json").read_text())["config"]
    with tempfile.TemporaryDirectory() as tmp:
        overrides = {"provider": f"replay:{run_dir / 'recording.jsonl'}", "out_dir": tmp}
        try:
            config = resolve_config(resolved, overrides)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        result = run(config, resume=False)
        if result.status != EXIT_OK:
            print(result.message, file=sys.stderr)
            return result.status
        names = sorted(str(p.relative_to(run_dir)) for p in run_dir.glob("generations/*.json"))
        names += ["curves.jsonl", "recording.jsonl", "result.json"]
        mismatched = [n for n in names if not filecmp.cmp(run_dir / n, result.run_dir / n, shallow=False)]
    if mismatched:
        print("replay differs: " + ", ".join(mismatched))
        return EXIT_INVALID
    print(f"replay identical ({len(names)} artifacts)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lero", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one mode end to end")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate run directories into a result table")
    p.add_argument("runs", nargs="+", help="run directories or parents of run directories")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate-candidate", help="statically check and probe a candidate script")
    p.add_argument("path")
    p.add_argument("--kind", choices=[k.value for k in Kind])
    p.add_argument("--scenario", choices=SCENARIOS, default="reference")
    p.add_argument("--n-agents", type=int)
    p.add_argument("--n-landmarks", type=int)
    p.add_argument("--history-depth", type=int, default=1)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("replay-check", help="re-run a run from its recording and diff the artifacts")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_replay_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
