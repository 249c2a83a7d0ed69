from __future__ import annotations

import json
import re
from fractions import Fraction as F

import pytest

from privtrace.cli import cli_main
from privtrace.dltts import OracleVerdict, reach_stop, validate
from privtrace.dotexport import export_dot
from privtrace.scenario import ScenarioError, build_run, load_scenario, run_scenario

from conftest import SCENARIOS

HOSPITAL = str(SCENARIOS / "hospital" / "scenario.json")
ENTERPRISE = str(SCENARIOS / "enterprise" / "scenario.json")


def test_hospital_run_reaches_stop(hospital):
    dltts, verdicts = build_run(hospital, "trace")
    assert validate(dltts) == []
    assert verdicts["s6"] is OracleVerdict.VIOLATION
    assert all(
        v is OracleVerdict.CONTINUE for s, v in verdicts.items() if s != "s6"
    )
    reached, runs = reach_stop(dltts)
    assert reached
    assert runs[0].states == ("s0", "s2", "s4", "s6", "STOP")
    assert runs[0].probability == F(2, 3)


def test_unknown_run_errors(hospital):
    with pytest.raises(ScenarioError):
        build_run(hospital, "nope")


def test_empty_scenario_rejected(tmp_path):
    (tmp_path / "scenario.json").write_text("{}")
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "scenario.json")


def test_epsilon_violation_run(hospital):
    secret = [hospital.table("published").row("l4").cells]
    dltts, verdicts = build_run(hospital, "trace", epsilon=F(0), secret=secret)
    assert verdicts["s5"] is OracleVerdict.EPSILON_VIOLATION
    assert verdicts["s6"] is OracleVerdict.VIOLATION
    reached, runs = reach_stop(dltts)
    assert reached and len(runs) == 2
    assert sum(r.probability for r in runs) == 1


def test_cli_analyze_epsilon_flags(capsys):
    code = cli_main(
        ["analyze", "--scenario", HOSPITAL, "--epsilon", "0",
         "--secret", "published:l4"]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "oracle at s5: epsilon-violation" in out
    assert cli_main(["analyze", "--scenario", HOSPITAL, "--epsilon", "0"]) == 2


def test_report_is_deterministic(hospital):
    a = run_scenario(hospital)
    b = run_scenario(hospital)
    assert a.body() == b.body()


def test_report_values_reparse_to_exact_fractions(hospital):
    report = run_scenario(hospital)
    text = report.body()
    rho_pc = report.values["metric/published/l4/l5/paper-compat/rho"]
    assert rho_pc == F(39, 20)
    assert "rho = 39/20" in text
    assert F("39/20") == rho_pc
    m = re.search(r"probability (\d+/\d+)", text)
    assert m and F(m.group(1)) == F(2, 3)


def test_enterprise_report_flags_discrepancy(enterprise):
    report = run_scenario(enterprise)
    text = report.body()
    assert "Max_pr(l4) = 1/4 (declared 3/16)" in text
    assert "NOTE: computed value differs" in text
    assert "Pr(response=3 | M) = 3/5" in text
    assert report.values["attack/C/max_pr/l4"] == F(1, 4)
    assert report.values["attack/C/max_pr/l3"] == F(3, 16)


def test_enterprise_strategy_sections(enterprise):
    report = run_scenario(enterprise)
    assert report.values["strategy/B/C/declared/off"] == [("s7", "l3"), ("s8", "l4")]
    assert report.values["strategy/B/C/computed/off"] == [("s7", "l3")]
    assert report.values["strategy/A/C/declared/off"] == [("s5", "l1"), ("s6", "l2")]
    text = report.body()
    assert "s8 response(l4): Pr = 1/5 <= baseline 1/4 -> stays ON" in text


def test_cli_metric_prints_published_value(capsys):
    code = cli_main(
        ["metric", "--scenario", HOSPITAL, "--mode", "paper-compat",
         "--pair", "l4", "l5"]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "39/20" in out


def test_cli_metric_uncomparable_exits_one(tmp_path, capsys):
    # two rows of different shapes living in one nominal-only table cannot
    # happen via CSV; exercise the exit path with a missing row instead
    code = cli_main(
        ["metric", "--scenario", HOSPITAL, "--pair", "l4", "nope"]
    )
    assert code == 2


def test_cli_analyze_full_report(capsys):
    code = cli_main(["analyze", "--scenario", HOSPITAL, "--expect-violation"])
    out = capsys.readouterr().out
    assert code == 0
    assert "stop reached: s0 -> s2 -> s4 -> s6 -> STOP  probability 2/3" in out
    assert "(20/39)*ln(2/1)" in out


def test_cli_dp_check(capsys, tmp_path):
    scenario = {
        "name": "rrcheck",
        "schema": "schema.json",
        "tables": {},
        "mechanisms": {
            "rr": {
                "outputs": ["True", "False"],
                "probs": {
                    "True": {"True": "3/4", "False": "1/4"},
                    "False": {"True": "1/4", "False": "3/4"},
                },
            }
        },
    }
    (tmp_path / "schema.json").write_text(json.dumps(
        {"columns": [{"name": "X", "class": "nominal", "group": "identifier"}]}
    ))
    (tmp_path / "scenario.json").write_text(json.dumps(scenario))
    code = cli_main(
        ["dp-check", "--scenario", str(tmp_path / "scenario.json"),
         "--mechanism", "rr"]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "min LDP epsilon = ln(3/1)" in out
    assert "min DP epsilon (hamming) = ln(3/1)" in out


def test_cli_dp_check_standalone_mechanism_file(capsys, tmp_path):
    doc = {
        "name": "rr",
        "outputs": ["True", "False"],
        "probs": {
            "True": {"True": "3/4", "False": "1/4"},
            "False": {"True": "1/4", "False": "3/4"},
        },
    }
    path = tmp_path / "rr.json"
    path.write_text(json.dumps(doc))
    code = cli_main(["dp-check", "--mechanism-file", str(path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "min LDP epsilon = ln(3/1)" in out
    assert "witness:" in out


def test_cli_strategy_dot_marks_off_edges(capsys, tmp_path):
    dot_path = tmp_path / "b.dot"
    code = cli_main(
        ["strategy", "--scenario", ENTERPRISE, "--attacker", "B",
         "--dot", str(dot_path)]
    )
    capsys.readouterr()
    assert code == 0
    dot = dot_path.read_text()
    assert dot.count("style=dashed") == 2


def test_profile_file_indirection(tmp_path):
    src = SCENARIOS / "enterprise"
    for name in ("schema.json", "responses.csv"):
        (tmp_path / name).write_text((src / name).read_text())
    profile = {
        "attribute_order": ["Sex"],
        "priors": {"Sex": {"F": "1/2", "M": "1/2"}},
    }
    (tmp_path / "p.json").write_text(json.dumps(profile))
    scenario_doc = {
        "name": "indirect",
        "schema": "schema.json",
        "tables": {"responses": {"file": "responses.csv"}},
        "profiles": {"P": "p.json"},
    }
    (tmp_path / "scenario.json").write_text(json.dumps(scenario_doc))
    sc = load_scenario(tmp_path / "scenario.json")
    assert sc.profiles["P"].attribute_order == ("Sex",)


def test_strategy_report_refused_marker(enterprise):
    report = run_scenario(enterprise).body()
    assert "response(l3) at s7 answers 'refused'" in report


def test_cli_strategy_off_list(capsys):
    code = cli_main(
        ["strategy", "--scenario", ENTERPRISE, "--attacker", "B", "--baseline", "C"]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "switched off: s7:l3, s8:l4" in out
    assert "s8 response(l4): Pr = 1/5 <= baseline 1/4 -> stays ON" in out


def test_cli_attack_reports(capsys):
    code = cli_main(
        ["attack", "--scenario", ENTERPRISE, "--attacker", "B", "--attacker", "A"]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "Pr(response=3 | M) = 3/5" in out
    assert "Pr(response=1 | F) = 2/5" in out


def test_cli_export_dot_counts(capsys, tmp_path):
    path = tmp_path / "trace.dot"
    code = cli_main(
        ["export-dot", "--scenario", HOSPITAL, "--dltts", "trace",
         "--dot", str(path)]
    )
    assert code == 0
    dot = path.read_text()
    assert len([l for l in dot.splitlines() if "[shape=" in l]) == 8
    assert '"s6" -> "STOP" [label="δ / 1"]' in dot

    code = cli_main(
        ["export-dot", "--scenario", ENTERPRISE, "--attacker", "B"]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert len([l for l in out.splitlines() if "[shape=" in l]) == 12


def test_cli_validate_ok_and_malformed(capsys, tmp_path):
    assert cli_main(["validate", "--scenario", HOSPITAL]) == 0
    capsys.readouterr()
    bad_schema = {
        "columns": [{"name": "A", "class": "nominal", "group": "identifier"}],
        "taxonomies": {"t": {"root": "x", "children": {"x": ["y"], "y": ["x"]}}},
    }
    (tmp_path / "schema.json").write_text(json.dumps(bad_schema))
    (tmp_path / "scenario.json").write_text(
        json.dumps({"name": "bad", "schema": "schema.json", "tables": {}})
    )
    assert cli_main(["validate", "--scenario", str(tmp_path / "scenario.json")]) == 2


def test_cli_validate_reports_transcript_inconsistency(capsys):
    # the baseline transcript's drawn label sets do not partition; validate
    # surfaces exactly that and signals it through the exit code
    code = cli_main(["validate", "--scenario", ENTERPRISE])
    out = capsys.readouterr().out
    assert code == 1
    assert "do not partition" in out


def test_cli_validate_flags_invalid_system(capsys, tmp_path):
    (tmp_path / "schema.json").write_text(json.dumps(
        {"columns": [{"name": "A", "class": "nominal", "group": "identifier"}]}
    ))
    (tmp_path / "bad.dltts").write_text("s0 -> [(s1, 1/2, x)] q\n")
    (tmp_path / "scenario.json").write_text(json.dumps(
        {"name": "bad", "schema": "schema.json", "tables": {},
         "dltts": {"bad": "bad.dltts"}}
    ))
    code = cli_main(["validate", "--scenario", str(tmp_path / "scenario.json")])
    out = capsys.readouterr().out
    assert code == 1
    assert "INVALID" in out


def test_cli_unknown_flag_exits_two(capsys):
    assert cli_main(["metric", "--scenario", HOSPITAL, "--frobnicate"]) == 2
    assert cli_main(["no-such-command"]) == 2


def test_export_dot_is_valid_dot_syntax(hospital):
    dltts, _ = build_run(hospital, "trace")
    dot = export_dot(dltts)
    assert dot.startswith("digraph ")
    assert dot.rstrip().endswith("}")
    assert dot.count("{") == dot.count("}")
    assert dot.count('"') % 2 == 0
    body = dot[dot.index("{") + 1 : dot.rindex("}")]
    node_re = re.compile(r'^\s*"[^"]+" \[[^\]]*\];$')
    edge_re = re.compile(r'^\s*"[^"]+" -> "[^"]+" \[label="[^"]*"(, style=\w+)?\];$')
    attr_re = re.compile(r"^\s*\w+=\w+;$")
    for line in filter(None, (l.strip() for l in body.splitlines())):
        assert node_re.match(line) or edge_re.match(line) or attr_re.match(line), line


def test_export_dot_single_state():
    from privtrace.dltts import Dltts

    single = Dltts("s0", "STOP", frozenset({"s0", "STOP"}), ())
    dot = export_dot(single)
    assert len([l for l in dot.splitlines() if "[shape=" in l]) == 1


def test_label_equivalence_in_report(hospital):
    report = run_scenario(hospital)
    classes = report.values["label_equivalence/trace/s4"]
    assert len(classes) == 1
    assert "1 class(es)" in report.body()
