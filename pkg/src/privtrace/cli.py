"""Command-line front end.

Exit codes: 0 success; 1 when the requested finding is absent (uncomparable
pair, unbounded epsilon, empty attack report, validation violations found);
2 on input or usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .attack import AttackError, apply_strategy, attack_problems
from .dltts import DlttsError, validate
from .dotexport import export_dot
from .metrics import MetricError
from .privacy import (
    HammingAdjacency,
    Mechanism,
    PrivacyError,
    RhoAdjacency,
    min_dp_epsilon,
    min_ldp_epsilon,
    parse_epsilon,
)
from .scenario import (
    Report,
    Scenario,
    ScenarioError,
    attack_for,
    attack_section,
    build_run,
    load_scenario,
    metric_section,
    parse_mode,
    run_scenario,
    strategy_section,
)
from .schema import SchemaError

INPUT_ERRORS = (
    ScenarioError,
    SchemaError,
    DlttsError,
    AttackError,
    PrivacyError,
    MetricError,
    OSError,
    KeyError,
    ValueError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privtrace",
        description="privacy analysis over anonymized tables and query traces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallelism hint (accepted, currently sequential)")

    p = sub.add_parser("metric", help="pairwise distances over table rows")
    common(p)
    p.add_argument("--pair", nargs=2, metavar=("LINE", "LINE"), required=True)
    p.add_argument("--mode", choices=["integer-set", "paper-compat"],
                   default="integer-set")
    p.add_argument("--table", help="table name (default: the scenario's metric table)")

    p = sub.add_parser("analyze", help="full scenario report (runs + oracle)")
    common(p)
    p.add_argument("--epsilon", help="arm the epsilon-violation oracle: "
                   "a fraction, decimal, or ln(a/b) literal")
    p.add_argument("--secret", action="append", default=[],
                   metavar="TABLE:LINE", help="secret rows for the epsilon check")
    p.add_argument("--mode", choices=["integer-set", "paper-compat"],
                   default="integer-set")
    p.add_argument("--dot", help="write each scripted run as DOT next to this path")
    p.add_argument("--expect-violation", action="store_true",
                   help="exit 1 unless some run reaches Stop")

    p = sub.add_parser("dp-check", help="LDP/DP epsilon bounds for a mechanism")
    p.add_argument("--scenario", help="scenario JSON file (for named mechanisms)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallelism hint (accepted, currently sequential)")
    p.add_argument("--mechanism", help="mechanism name within the scenario")
    p.add_argument("--mechanism-file",
                   help="standalone mechanism JSON (outputs + probs table)")
    p.add_argument("--adjacency", choices=["hamming", "rho"], default="hamming")
    p.add_argument("--mode", choices=["integer-set", "paper-compat"],
                   default="integer-set")

    p = sub.add_parser("attack", help="threshold report for attackers")
    common(p)
    p.add_argument("--attacker", action="append", required=True)
    p.add_argument("--built", action="store_true",
                   help="build from the profile instead of loading the transcript")
    p.add_argument("--dot", help="write the attack system as DOT to this path")

    p = sub.add_parser("strategy", help="response-blocking strategy report")
    common(p)
    p.add_argument("--attacker", required=True)
    p.add_argument("--baseline", help="baseline name (default from the scenario)")
    p.add_argument("--dot", help="write the post-strategy system (OFF edges "
                   "dashed) to this path")

    p = sub.add_parser("export-dot", help="DOT rendering of a named system")
    common(p)
    p.add_argument("--dltts", help="explicit transcript name")
    p.add_argument("--attacker", help="attack transcript name")
    p.add_argument("--run", help="scripted run name (built first)")
    p.add_argument("--dot", help="output path (default: stdout)")

    p = sub.add_parser("validate", help="validate scenario inputs and systems")
    common(p)
    p.add_argument("--dltts", help="check one named system only")

    return parser


def _emit(report: Report) -> None:
    sys.stdout.write(report.text())


def _cmd_metric(scenario: Scenario, args) -> int:
    table = args.table or scenario.analysis.get("metric", {}).get("table")
    if table is None:
        raise ScenarioError("no table given and the scenario names none")
    report = Report(scenario.name)
    ok = metric_section(scenario, report, table, [tuple(args.pair)], [args.mode])
    _emit(report)
    return 0 if ok else 1


def _cmd_analyze(scenario: Scenario, args) -> int:
    epsilon = parse_epsilon(args.epsilon) if args.epsilon else None
    if epsilon is not None and not args.secret:
        raise ScenarioError("--epsilon needs at least one --secret TABLE:LINE")
    report = run_scenario(
        scenario, epsilon=epsilon, secret=args.secret or None,
        mode=parse_mode(args.mode),
    )
    _emit(report)
    if args.dot:
        base = Path(args.dot)
        for name in scenario.analysis.get("runs", []):
            dltts, _ = build_run(scenario, name)
            target = base if len(scenario.analysis.get("runs", [])) == 1 else (
                base.with_name(f"{base.stem}-{name}{base.suffix}")
            )
            target.write_text(export_dot(dltts))
    if args.expect_violation:
        reached = any(
            report.values.get(f"run/{name}/stop_reached")
            for name in scenario.analysis.get("runs", [])
        )
        return 0 if reached else 1
    return 0


def _cmd_dp_check(scenario: Scenario | None, args) -> int:
    if args.mechanism_file:
        doc = json.loads(Path(args.mechanism_file).read_text())
        name = doc.get("name", Path(args.mechanism_file).stem)
        m = Mechanism.from_rows(name, doc["probs"], outputs=doc.get("outputs"))
    elif scenario is not None and args.mechanism:
        name = args.mechanism
        m = scenario.mechanism(name)
    else:
        raise ScenarioError("dp-check needs --mechanism-file, or --scenario "
                            "plus --mechanism")
    report = Report(scenario.name if scenario else name)
    report.add(f"## dp-check {name}")
    ldp = min_ldp_epsilon(m)
    report.put(f"dp/{name}/ldp", ldp, f"min LDP epsilon = {ldp}")
    report.add(f"  witness: {ldp.witness_str()}")
    if args.adjacency == "hamming":
        adj = HammingAdjacency()
    else:
        taxonomies = scenario.schema.taxonomies if scenario else {}
        adj = RhoAdjacency(parse_mode(args.mode), taxonomies=taxonomies)
    dp = min_dp_epsilon(m, adj)
    report.put(f"dp/{name}/dp", dp, f"min DP epsilon ({args.adjacency}) = {dp}")
    report.add(f"  witness: {dp.witness_str()}")
    _emit(report)
    return 1 if (ldp.unbounded or dp.unbounded) else 0


def _cmd_attack(scenario: Scenario, args) -> int:
    report = Report(scenario.name)
    found = False
    for name in args.attacker:
        found = attack_section(scenario, report, name, built=args.built) or found
        if args.built:
            table_name = scenario.analysis.get("attack", {}).get("table")
            attack = attack_for(scenario, name, built=True)
            for prob in attack_problems(
                attack, scenario.table(table_name) if table_name else None
            ):
                report.add(f"INVALID: {prob}")
        if args.dot:
            attack = attack_for(scenario, name, built=args.built)
            Path(args.dot).write_text(export_dot(attack.dltts))
    _emit(report)
    return 0 if found else 1


def _cmd_strategy(scenario: Scenario, args) -> int:
    baseline = args.baseline or scenario.baseline
    if baseline is None:
        raise ScenarioError("no baseline given and the scenario names none")
    report = Report(scenario.name)
    strategy_section(scenario, report, args.attacker, baseline)
    _emit(report)
    if args.dot:
        attack = attack_for(scenario, args.attacker)
        updated, _ = apply_strategy(
            attack, attack_for(scenario, baseline),
            baseline_max=scenario.declared_baseline or None,
        )
        off_edges = frozenset(
            (e.node, e.target) for e in updated.responses
            if not updated.switched_on(e.node, e.line)
        )
        Path(args.dot).write_text(export_dot(updated.dltts, off_edges=off_edges))
    return 0


def _cmd_export_dot(scenario: Scenario, args) -> int:
    if args.dltts:
        dltts = scenario.dltts.get(args.dltts)
        if dltts is None:
            raise ScenarioError(f"no explicit system named {args.dltts!r}")
    elif args.attacker:
        dltts = attack_for(scenario, args.attacker).dltts
    elif args.run:
        dltts, _ = build_run(scenario, args.run)
    else:
        raise ScenarioError("export-dot needs --dltts, --attacker, or --run")
    text = export_dot(dltts)
    if args.dot:
        Path(args.dot).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_validate(scenario: Scenario, args) -> int:
    report = Report(scenario.name)
    problems: list[str] = []
    names = [args.dltts] if args.dltts else sorted(scenario.dltts)
    for name in names:
        dltts = scenario.dltts.get(name)
        if dltts is None:
            raise ScenarioError(f"no explicit system named {name!r}")
        for p in validate(dltts):
            problems.append(f"{name}: {p}")
    if not args.dltts:
        for name in sorted(scenario.attack_dltts):
            for p in attack_problems(scenario.attack_dltts[name]):
                problems.append(f"{name}: {p}")
        for run_name in scenario.runs:
            dltts, _ = build_run(scenario, run_name)
            for p in validate(dltts):
                problems.append(f"run {run_name}: {p}")
    for p in problems:
        report.add(f"INVALID: {p}")
    if not problems:
        report.add("all systems valid")
    _emit(report)
    return 1 if problems else 0


_COMMANDS = {
    "metric": _cmd_metric,
    "analyze": _cmd_analyze,
    "dp-check": _cmd_dp_check,
    "attack": _cmd_attack,
    "strategy": _cmd_strategy,
    "export-dot": _cmd_export_dot,
    "validate": _cmd_validate,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        scenario = load_scenario(args.scenario) if args.scenario else None
        if scenario is None and args.command != "dp-check":
            raise ScenarioError("--scenario is required")
        return _COMMANDS[args.command](scenario, args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
