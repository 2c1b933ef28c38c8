"""``grasp-sim`` command line: run experiments, replay traces, rebuild reports."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, SimConfig, load_config
from .fsm import read_trace, validate_trace
from .harness import (
    DEFAULT_TRIALS,
    SCENARIO_ORDER,
    IoFailure,
    ScenarioKind,
    ScenarioSpec,
    aborted_fraction,
    emit_reports,
    read_records,
    run_experiment,
    summarize,
)

log = logging.getLogger("grasp_sim")

EXIT_OK = 0
EXIT_ABORTED = 2
EXIT_IO = 3
EXIT_USAGE = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grasp-sim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run Monte Carlo trials and write reports")
    kinds = [k.value for k in SCENARIO_ORDER]
    run.add_argument("--scenario", default="all", choices=kinds + ["all"])
    run.add_argument("--trials", type=int, default=None, help="trials per scenario (default: 20, 20, 10, 10, 5 in scenario order)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--config", type=Path, default=None, help="YAML config; omitted keys keep defaults")
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--scale", type=int, default=1, help="multiply trial counts")

    rep = sub.add_parser("replay", help="validate a transition trace against the state graph")
    rep.add_argument("--trace", type=Path, required=True)

    rpt = sub.add_parser("report", help="recompute summaries from raw trial records")
    rpt.add_argument("--in", dest="in_dir", type=Path, required=True)
    return p


def _specs(args, cfg: SimConfig) -> list[ScenarioSpec]:
    kinds = list(SCENARIO_ORDER) if args.scenario == "all" else [ScenarioKind(args.scenario)]
    specs = []
    for k in kinds:
        n = DEFAULT_TRIALS[k] if args.trials is None else args.trials
        specs.append(ScenarioSpec.for_kind(k, cfg, trials=n * args.scale, seed_base=args.seed))
    return specs


def _print_summary(summary) -> None:
    print(f"{'scenario':<18} {'pick':>9} {'place':>9} {'resets':>8}")
    for name, m in summary.scenarios.items():
        print(f"{name:<18} {m.pick_successes:>4}/{m.trials:<4} {m.place_successes:>4}/{m.pick_successes:<4} {m.reset_trials:>4}/{m.trials}")
    o = summary.overall
    print(f"{'Overall':<18} {o.pick_successes:>4}/{o.trials:<4} {o.place_successes:>4}/{o.pick_successes:<4} {o.reset_trials:>4}/{o.trials}")
    if o.pick_time:
        pt = o.pick_time
        print(f"pick time [s]: min {pt['min']:.1f}  median {pt['median']:.1f}  mean {pt['mean']:.1f}  max {pt['max']:.1f}")


def cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else SimConfig()
    if args.trials is not None and args.trials <= 0 or args.scale <= 0:
        print("--trials and --scale must be positive", file=sys.stderr)
        return EXIT_USAGE
    specs = _specs(args, cfg)
    t0 = time.perf_counter()
    records, lines = run_experiment(specs, cfg, workers=max(1, args.workers))
    log.info("ran %d records in %.1f s", len(records), time.perf_counter() - t0)
    summary = summarize(records)
    emit_reports(summary, records, args.out, lines)
    _print_summary(summary)
    if aborted_fraction(records) > 0.5:
        print("most trials aborted after exhausting resets", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        rows = read_trace(args.trace)
    except OSError as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return EXIT_IO
    problems = validate_trace(rows)
    for p in problems:
        print(p)
    print(f"{len(rows)} transitions, {len(problems)} problems")
    return EXIT_OK if not problems else 1


def cmd_report(args) -> int:
    records = read_records(args.in_dir)
    if not records:
        print("no trial records found", file=sys.stderr)
        return EXIT_IO
    summary = summarize(records)
    emit_reports(summary, records, args.in_dir)
    _print_summary(summary)
    return EXIT_ABORTED if aborted_fraction(records) > 0.5 else EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return {"run": cmd_run, "replay": cmd_replay, "report": cmd_report}[args.command](args)
    except IoFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
