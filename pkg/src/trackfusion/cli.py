"""Command-line entry points: single runs, Monte Carlo campaigns, validation."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, default_scenario_path, load_scenario
from .harness import CONDITIONS, emit_aggregate, emit_run, run_monte_carlo, run_once

logger = logging.getLogger(__name__)

_CONDITION_ALIASES = {"nominal": "nominal", "hard": "hard_switch", "hard_switch": "hard_switch", "stealthy": "stealthy"}


def _load(path: str | None, seed: int | None):
    src = Path(path) if path else default_scenario_path()
    raw = json.loads(src.read_text())
    if seed is not None:
        raw["seed"] = seed
    return load_scenario(raw), raw


def _cmd_run(args) -> int:
    scenario, raw = _load(args.scenario, args.seed)
    condition = _CONDITION_ALIASES[args.condition]
    result = run_once(scenario, condition, run_index=args.run_index, keep_measurements=args.dump_measurements)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.json").write_text(json.dumps(raw, indent=2) + "\n")
    emit_run(result, out)
    if result.hijack_success is not None:
        print(f"condition={condition} hijack_success={result.hijack_success} transitions={result.transitions}")
    else:
        print(f"condition={condition} (no attack)")
    print(f"outputs written to {out}")
    return 0


def _cmd_mc(args) -> int:
    scenario, raw = _load(args.scenario, args.seed)
    conditions = tuple(_CONDITION_ALIASES[c.strip()] for c in args.conditions.split(","))
    agg, samples = run_monte_carlo(scenario, conditions, args.runs, jobs=args.jobs, keep_runs=True)
    emit_aggregate(agg, raw, Path(args.out), sample_runs=samples)
    for c in conditions:
        rate = agg.success_rate(c)
        rate_s = "n/a" if rate is None else f"{rate:.2f}"
        print(f"{c}: hijack success rate = {rate_s}")
    print(f"aggregates written to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    try:
        scenario, _ = _load(args.scenario, None)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return 1
    print(
        f"ok: {len(scenario.nodes)} nodes, {len(scenario.true_trajectories)} targets, "
        f"horizon {scenario.horizon}, cutoff {scenario.matching.cutoff}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trackfusion", description="Distributed tracking and label-hijack simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a single simulation run")
    run_p.add_argument("--scenario", help="scenario JSON (default: shipped case study)")
    run_p.add_argument("--condition", choices=sorted(_CONDITION_ALIASES), default="nominal")
    run_p.add_argument("--seed", type=int, help="override the scenario seed")
    run_p.add_argument("--run-index", type=int, default=0)
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--dump-measurements", action="store_true", help="also write measurements.csv")
    run_p.set_defaults(func=_cmd_run)

    mc_p = sub.add_parser("mc", help="Monte Carlo campaign over conditions")
    mc_p.add_argument("--scenario", help="scenario JSON (default: shipped case study)")
    mc_p.add_argument("--runs", type=int, default=100)
    mc_p.add_argument("--conditions", default=",".join(CONDITIONS))
    mc_p.add_argument("--seed", type=int, help="override the scenario seed")
    mc_p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    mc_p.add_argument("--out", required=True)
    mc_p.set_defaults(func=_cmd_mc)

    val_p = sub.add_parser("validate", help="check a scenario file")
    val_p.add_argument("--scenario", required=True)
    val_p.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
