"""Command-line entry point: ``safekv run | rules | report``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .detection.rules import CompileError, ParseError, RuleEngine, default_rules_path
from .report import ArtifactError, build_report, format_table
from .serving_sim import dump_json, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
PATTERNS_ENV = "SAFEKV_SIM_PATTERNS"
RUN_COLUMNS = ("label", "policy", "hit_rate", "ttft_mean", "ttft_p95", "ttft_p99", "defense_rate", "leak_events",
               "dropped")
REPORT_COLUMNS = ("run", "policy", "hit_rate", "ttft_mean", "ttft_p50", "ttft_p95", "ttft_p99", "leak_events",
                  "defense_success_rate", "throughput_tokens_per_s")


def patterns_path(explicit: str | None = None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(PATTERNS_ENV)
    return Path(env) if env else default_rules_path()


def _err(msg: str) -> None:
    print(f"safekv: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    ref = args.config_file or args.config
    if not ref:
        _err("run: no config given (use --config PATH or a preset name)")
        return EXIT_CONFIG
    try:
        scenario = load_config(ref, seed=args.seed, output_dir=args.output)
        engine = RuleEngine.from_path(patterns_path())
    except ConfigError as exc:
        for line in exc.diagnostics:
            _err(line)
        return EXIT_CONFIG
    except (ParseError, CompileError) as exc:
        _err(f"pattern config: {exc}")
        return EXIT_CONFIG
    out = Path(scenario.output_dir)
    try:
        outcomes = run_scenario(scenario, out, engine)
        rows = [o.summary() for o in outcomes]
        out.mkdir(parents=True, exist_ok=True)
        doc = {"scenario": scenario.name, "seed": scenario.seed, "runs": rows,
               "hashes": {o.label: o.hashes for o in outcomes}}
        (out / "summary.json").write_text(dump_json(doc), encoding="utf-8")
    except Exception as exc:  # noqa: BLE001 - any simulator failure maps to the runtime exit code
        _err(f"run failed: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    if not args.quiet:
        print(f"scenario {scenario.name} (seed {scenario.seed}) -> {out}")
        print(format_table(rows, RUN_COLUMNS))
    return EXIT_OK


def cmd_rules(args) -> int:
    path = patterns_path(args.path or args.config)
    try:
        engine = RuleEngine.from_path(path)
    except CompileError as exc:
        _err(f"{path}: rule {exc.rule_id}: {exc}")
        return EXIT_CONFIG
    except ParseError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    active = engine.active
    if args.action == "validate":
        if not args.quiet:
            print(f"{path}: OK ({len(active)} rules, {active.enabled_count} enabled, version {active.version})")
    elif args.action == "list":
        for r in active.rules:
            if args.quiet:
                continue
            state = "" if r.enabled else "  (disabled)"
            print(f"{r.rule_id}\t{r.category}\t{r.kind.value}{state}")
    else:
        if args.text is None:
            _err("rules test: sample text required")
            return EXIT_CONFIG
        verdict = engine.scan(args.text)
        hits = engine.matches(args.text)
        print("SENSITIVE" if verdict.sensitive else "clean")
        for cat in verdict.categories:
            ids = sorted({m.rule_id for m in hits if m.category == cat})
            print(f"  {cat}: {', '.join(ids)}")
    return EXIT_OK


def cmd_report(args) -> int:
    paths = args.artifacts or ([args.output] if args.output else [])
    if not paths:
        _err("report: no artifact directory given")
        return EXIT_CONFIG
    out = Path(args.report_dir) if args.report_dir else Path(paths[0]) / "report"
    try:
        res = build_report(paths, out, plots=not args.no_plots)
    except ArtifactError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        _err(f"report failed: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    if not args.quiet:
        print(format_table(res["summary"], REPORT_COLUMNS))
        if res["tiers"]:
            print()
            print(format_table(res["tiers"], ("run", "tier1", "tier2", "tier3", "tier12_fraction")))
        print(f"wrote {len(res['files'])} files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="scenario config (run) or pattern config (rules)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override every seed in the scenario")
    common.add_argument("--output", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress normal output")

    p = argparse.ArgumentParser(prog="safekv", description="Privacy-aware KV-cache simulator.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run a scenario and write artifacts")
    run.add_argument("config_file", nargs="?", help="config file or preset name")
    run.set_defaults(func=cmd_run)

    rules = sub.add_parser("rules", parents=[common], help="validate, list or test Tier-1 rules")
    rules.add_argument("action", choices=("validate", "list", "test"))
    rules.add_argument("text", nargs="?", help="sample text (test)")
    rules.add_argument("--path", help=f"pattern config (default: ${PATTERNS_ENV} or the shipped set)")
    rules.set_defaults(func=cmd_rules)

    rep = sub.add_parser("report", parents=[common], help="aggregate run artifacts into tables and plots")
    rep.add_argument("artifacts", nargs="*", help="run or scenario directories")
    rep.add_argument("--report-dir", help="where to write tables and plots (default: <first>/report)")
    rep.add_argument("--no-plots", action="store_true", help="tables only")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("output", None), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
