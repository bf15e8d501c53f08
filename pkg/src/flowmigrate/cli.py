"""Command-line entry points: run one scenario, compare strategies, or
replay the bundled reproduction suite.

Exit codes: 0 success, 1 assertion/criterion failure, 2 configuration
error, 3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import acceptance
from .errors import ConfigError, FlowMigrateError, InvariantViolation
from .metrics import compute_report
from .model import bundled_scenario_names, resolve_scenario, with_overrides
from .runtime import run_scenario

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmigrate",
        description="Simulate elastic dataflow migration strategies (DSM, DCR, CCR).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--realtime-scale", type=float, default=0.0,
                       help="pace the simulation at this fraction of real time (0 = as fast as possible)")
        p.add_argument("--ack-timeout", type=float, default=None,
                       help="override ackTimeout (seconds)")
        p.add_argument("--rebalance-duration", type=float, default=None,
                       help="override rebalanceDuration (seconds)")
        p.add_argument("--kernel", choices=["pure", "native"], default=None,
                       help="force a kernel backend")

    p_run = sub.add_parser("run", help="run one scenario and write timeline.csv + report.json")
    p_run.add_argument("scenario", help="scenario file path or bundled name")
    p_run.add_argument("--strategy", choices=["dsm", "dcr", "ccr"], default=None,
                       help="override the scenario's strategy")
    add_common(p_run)

    p_cmp = sub.add_parser("compare", help="run DSM, DCR and CCR on one scenario and tabulate")
    p_cmp.add_argument("scenario", help="scenario file path or bundled name")
    add_common(p_cmp)

    p_rep = sub.add_parser("reproduce", help="run the bundled suite and check every acceptance criterion")
    p_rep.add_argument("--kernel", choices=["pure", "native"], default=None)

    sub.add_parser("scenarios", help="list bundled scenarios")
    return parser


def _load(args, strategy: str | None = None):
    config = resolve_scenario(args.scenario)
    overrides = {}
    if strategy:
        overrides["strategy"] = strategy.upper()
    if args.seed is not None:
        overrides["randomSeed"] = args.seed
    if args.ack_timeout is not None:
        overrides["ackTimeout"] = args.ack_timeout
    if args.rebalance_duration is not None:
        overrides["rebalanceDuration"] = args.rebalance_duration
    return with_overrides(config, **overrides) if overrides else config


def _write_outputs(out_dir: Path, timeline, report) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    timeline_path = out_dir / "timeline.csv"
    report_path = out_dir / "report.json"
    for path in (timeline_path, report_path):
        if path.exists():
            raise ConfigError(
                f"{path} already exists; run directories are append-only, "
                f"pick a fresh --out"
            )
    timeline.write_csv(timeline_path)
    report_path.write_text(report.to_json())


def cmd_run(args) -> int:
    config = _load(args, strategy=args.strategy)
    timeline, _engine = run_scenario(config, kernel_backend=args.kernel,
                                     realtime_scale=args.realtime_scale)
    report = compute_report(timeline, config)
    out_dir = Path(args.out) if args.out else Path("runs") / f"{config.name}-{config.strategy.lower()}-s{config.randomSeed}"
    _write_outputs(out_dir, timeline, report)
    print(f"{config.name} [{config.strategy}] seed={config.randomSeed}")
    _print_report_row(report)
    print(f"wrote {out_dir}/timeline.csv and {out_dir}/report.json")
    return EXIT_OK


_METRIC_COLUMNS = (
    ("restore", "restoreDurationMs"),
    ("drain/capture", "drainCaptureDurationMs"),
    ("rebalance", "rebalanceDurationMs"),
    ("catchup", "catchupTimeMs"),
    ("recovery", "recoveryTimeMs"),
    ("stabilization", "stabilizationTimeMs"),
    ("replayed", "replayedCount"),
)


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    return str(value)


def _print_report_row(report) -> None:
    for label, attr in _METRIC_COLUMNS:
        print(f"  {label:>14}: {_fmt(getattr(report, attr))}")


def cmd_compare(args) -> int:
    base = _load(args)
    reports = {}
    for strategy in ("DSM", "DCR", "CCR"):
        config = with_overrides(base, strategy=strategy)
        timeline, _ = run_scenario(config, kernel_backend=args.kernel,
                                   realtime_scale=args.realtime_scale)
        reports[strategy] = compute_report(timeline, config)
        if args.out:
            _write_outputs(Path(args.out) / strategy.lower(), timeline, reports[strategy])

    header = f"{'metric (ms)':>16} | {'DSM':>10} | {'DCR':>10} | {'CCR':>10}"
    print(f"scenario {base.name!r} seed={base.randomSeed}")
    print(header)
    print("-" * len(header))
    for label, attr in _METRIC_COLUMNS:
        row = " | ".join(f"{_fmt(getattr(reports[s], attr)):>10}" for s in ("DSM", "DCR", "CCR"))
        print(f"{label:>16} | {row}")

    checks = [
        ("restore CCR < DCR < DSM",
         reports["CCR"].restoreDurationMs < reports["DCR"].restoreDurationMs
         < reports["DSM"].restoreDurationMs),
        ("drain DCR > capture CCR",
         reports["DCR"].drainCaptureDurationMs > reports["CCR"].drainCaptureDurationMs),
        ("no replays under DCR/CCR",
         reports["DCR"].replayedCount == 0 and reports["CCR"].replayedCount == 0),
        ("DSM replays > 0", reports["DSM"].replayedCount > 0),
    ]
    failed = False
    for label, ok in checks:
        print(f"  [{'PASS' if ok else 'FAIL'}] {label}")
        failed |= not ok
    return EXIT_ASSERTION if failed else EXIT_OK


def cmd_reproduce(args) -> int:
    cache = acceptance.RunCache(kernel_backend=args.kernel)
    failed = False
    for _name, check in acceptance.ALL_CRITERIA:
        result = check(cache)
        print(result.line())
        if not result.passed:
            failed = True
            for detail in result.details:
                print(f"    {detail}")
    return EXIT_ASSERTION if failed else EXIT_OK


def cmd_scenarios(_args) -> int:
    for name in bundled_scenario_names():
        print(name)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "compare": cmd_compare,
        "reproduce": cmd_reproduce,
        "scenarios": cmd_scenarios,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except FlowMigrateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
