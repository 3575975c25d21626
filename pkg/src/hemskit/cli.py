"""Command-line entry point: ``hemskit {forecast,collab,flex,schedule,evaluate}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .hub import COMMANDS, RUNNERS, ModelsHub, NonConvergence, RunConfig
from .io import SchemaError, atomic_output
from .scheduler import ScheduleInfeasible

EXIT_OK, EXIT_NUMERIC, EXIT_IO = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hemskit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, help="JSON run configuration")
        cmd.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        cmd.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def load_config(command: str, path: Path | None, seed: int | None) -> RunConfig:
    if path is None:
        cfg = RunConfig(command)
    else:
        cfg = RunConfig.from_json(Path(path).read_text(encoding="utf-8"))
        if cfg.command != command:
            raise SchemaError(f"config is for '{cfg.command}', not '{command}'")
    if seed is not None:
        cfg = RunConfig(cfg.command, seed, cfg.params)
    return cfg


def run(command: str, cfg: RunConfig, out: Path) -> dict:
    with atomic_output(out) as stage:
        result = RUNNERS[command](cfg, stage, ModelsHub())
        (stage / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    return result


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.seed)
        result = run(args.command, cfg, args.out)
    except (SchemaError, OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonConvergence, ScheduleInfeasible) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(_summary(args.command, result))
    return EXIT_OK


def _summary(command: str, result: dict) -> str:
    if command == "schedule":
        return result["summary"]
    if command == "flex":
        return result["privacy_scan"]["verdict"]
    if command == "collab":
        return f"consensus reconstruction verdict: {result['privacy']['consensus']['verdict']}"
    return json.dumps(result.get("improvement_percent", {}), sort_keys=True)


if __name__ == "__main__":
    sys.exit(main())
