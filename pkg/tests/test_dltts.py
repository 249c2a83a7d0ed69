from __future__ import annotations

from dataclasses import replace
from fractions import Fraction as F

import pytest

from privtrace.dltts import (
    Branch,
    DELTA,
    Dltts,
    DlttsBuilder,
    DlttsError,
    Label,
    OracleVerdict,
    Transition,
    check_consistency,
    epsilon_equivalent_labels,
    parse_dltts,
    reach_stop,
    render_dltts,
    saturate,
    validate,
)
from privtrace.privacy import Mechanism
from privtrace.schema import (
    PrivacyPolicy,
    TOP,
    TuplePattern,
    load_table,
    parse_columns,
    parse_pattern,
)
from privtrace.values import Atom, STAR


@pytest.fixture(scope="module")
def covid_cases(hospital):
    return hospital.table("covid_cases")


@pytest.fixture(scope="module")
def pub_pattern(hospital):
    published = hospital.table("published")

    def make(text, negative=False):
        return parse_pattern(
            text, published.columns, hospital.schema.taxonomies,
            force_negative=negative,
        )

    return make


@pytest.fixture(scope="module")
def main_pattern(hospital):
    def make(text):
        return parse_pattern(
            text, hospital.schema.columns, hospital.schema.taxonomies
        )

    return make


def test_saturate_refines_taxonomy_with_count_table(pub_pattern, covid_cases):
    tag = frozenset({pub_pattern("([40-50],M,Physics,Viral-Infection)")})
    out = saturate(tag, [covid_cases])
    assert pub_pattern("([40-50],M,Physics,CoVid)") in out
    assert tag <= out


def test_saturate_empty_tag(covid_cases):
    assert saturate(frozenset(), [covid_cases]) == frozenset()


def test_saturate_no_joinable_columns(pub_pattern, covid_cases):
    # wildcard Dept blocks the join: nothing to deduce
    tag = frozenset({pub_pattern("([40-50],M,*,Viral-Infection)")})
    assert saturate(tag, [covid_cases]) == tag


def test_saturate_count_above_one_does_not_refine(hospital, pub_pattern):
    cols = parse_columns(
        [
            {"name": "Dept", "class": "nominal", "group": "quasi-identifier"},
            {"name": "Gender", "class": "nominal", "group": "quasi-identifier"},
            {"name": "Count", "class": "numerical", "group": "quasi-identifier"},
            {"name": "Ailment", "class": "taxoral", "group": "sensitive",
             "taxonomy": "ailment"},
        ],
        hospital.schema.taxonomies,
    )
    table = load_table(
        "Dept,Gender,Count,Ailment\nPhysics,M,2,CoVid\n",
        cols, hospital.schema.taxonomies, "counts2",
    )
    tag = frozenset({pub_pattern("([40-50],M,Physics,Viral-Infection)")})
    assert saturate(tag, [table]) == tag


@pytest.fixture(scope="module")
def staff_table(hospital):
    cols = parse_columns(
        [
            {"name": "Name", "class": "nominal", "group": "identifier"},
            {"name": "Dept", "class": "nominal", "group": "quasi-identifier"},
        ],
        hospital.schema.taxonomies,
    )
    return load_table(
        "Name,Dept\nJohn,Physics\nJoan,Chemistry\n",
        cols, hospital.schema.taxonomies, "staff",
    )


def test_r1_identifier_join(hospital, main_pattern, staff_table):
    tag = frozenset({main_pattern("(John,*,M,*,*)")})
    out = saturate(tag, [staff_table], columns=hospital.schema.columns)
    assert main_pattern("(John,*,M,Physics,*)") in out


def test_r3_unique_linkage(hospital, main_pattern):
    published = hospital.table("published")
    tag = frozenset({main_pattern("(John,*,M,Physics,Viral-Infection)")})
    out = saturate(tag, [published], columns=hospital.schema.columns)
    # unique published row matches (M, Physics, Viral-Infection): l5
    merged = [
        p for p in out
        if p.cell("Age") is not None and not isinstance(p.cell("Age"), type(STAR))
    ]
    assert any(
        p.cell("Name") == Atom("John") and str(p.cell("Age")) == "[40-50]"
        for p in merged
    )


def test_r3_two_matches_block_linkage(hospital, main_pattern):
    published = hospital.table("published")
    # (M, Viral-Infection) matches both l4 and l5: no propagation
    tag = frozenset({main_pattern("(John,*,M,*,Viral-Infection)")})
    out = saturate(tag, [published], columns=hospital.schema.columns)
    assert out == tag


def test_saturate_idempotent_and_monotone(pub_pattern, covid_cases):
    t_small = frozenset({pub_pattern("([40-50],M,Physics,Viral-Infection)")})
    t_big = t_small | {pub_pattern("([20-30],F,Physics,Viral-Infection)")}
    s_small = saturate(t_small, [covid_cases])
    s_big = saturate(t_big, [covid_cases])
    assert saturate(s_small, [covid_cases]) == s_small
    assert s_small <= s_big


def test_saturate_round_budget(pub_pattern, covid_cases):
    tag = frozenset({pub_pattern("([40-50],M,Physics,Viral-Infection)")})
    with pytest.raises(DlttsError):
        saturate(tag, [covid_cases], max_rounds=0)


def test_check_consistency_policy_hit(hospital, main_pattern):
    policy = hospital.schema.policy
    tag = frozenset({TOP, main_pattern("(John,46,M,Physics,CoVid)")})
    assert not check_consistency(tag, policy)
    assert check_consistency(frozenset(), policy)
    assert check_consistency(frozenset({TOP}), policy)


def test_check_consistency_direct_contradiction(main_pattern):
    p = main_pattern("(John,*,M,*,*)")
    tag = frozenset({p, replace(p, negative=True)})
    assert not check_consistency(tag, PrivacyPolicy(()))


def test_check_consistency_wildcard_does_not_confirm(hospital, main_pattern):
    # Ailment still unknown: the policy cannot be confirmed violated
    tag = frozenset({main_pattern("(John,*,M,*,*)")})
    assert check_consistency(tag, hospital.schema.policy)


def test_inconsistency_persists_under_growth(hospital, main_pattern):
    policy = hospital.schema.policy
    tag = frozenset({main_pattern("(John,46,M,Physics,CoVid)")})
    bigger = tag | {main_pattern("(Joan,24,F,Chemistry,Heart-Disease)")}
    assert not check_consistency(tag, policy)
    assert not check_consistency(bigger, policy)


def _mini_builder(hospital, **kwargs):
    return DlttsBuilder(
        policy=hospital.schema.policy,
        externals=[hospital.table("covid_cases")],
        columns=hospital.schema.columns,
        taxonomies=hospital.schema.taxonomies,
        **kwargs,
    )


def test_builder_pipeline_and_delta(hospital, main_pattern):
    b = _mini_builder(hospital)
    assert b.oracle_step("s0") is OracleVerdict.CONTINUE
    b.add_transition(
        "s0", "query:Gender",
        [("s2", F(1), Label("M:1", frozenset({"l2", "l4", "l5"}),
                            frozenset({main_pattern("(John,*,M,*,*)")})))],
    )
    assert b.oracle_step("s2") is OracleVerdict.CONTINUE
    b.add_transition(
        "s2", "query:Age",
        [
            ("s5", F(1, 3), Label("NotOld", frozenset({"l4"}), frozenset(
                {main_pattern("(John,[50-60],M,Maths,Viral-Infection)")}))),
            ("s6", F(2, 3), Label("NotOld", frozenset({"l5"}), frozenset(
                {main_pattern("(John,[40-50],M,Physics,Viral-Infection)")}))),
        ],
    )
    assert b.oracle_step("s5") is OracleVerdict.CONTINUE
    assert b.oracle_step("s6") is OracleVerdict.VIOLATION
    with pytest.raises(DlttsError):
        b.add_transition("s6", "query:More", [("s9", F(1), Label())])
    d = b.build()
    assert validate(d) == []
    reached, runs = reach_stop(d)
    assert reached
    assert runs[0].states == ("s0", "s2", "s6", "STOP")
    assert runs[0].probability == F(2, 3)
    assert d.state_probs["s6"] == F(2, 3)


def test_oracle_epsilon_violation(hospital):
    published = hospital.table("published")
    l5 = published.row("l5")
    pattern = TuplePattern(published.column_names(), l5.cells)
    b = DlttsBuilder(
        policy=PrivacyPolicy(()),
        columns=published.columns,
        taxonomies=hospital.schema.taxonomies,
    )
    b.add_transition("s0", "query", [("s1", F(1), Label(tuples=frozenset({pattern})))])
    verdict = b.oracle_step("s1", secret_set=[l5.cells], epsilon=F(0))
    assert verdict is OracleVerdict.EPSILON_VIOLATION
    d = b.build()
    assert any(t.action == DELTA and t.source == "s1" for t in d.transitions)


def test_oracle_rejects_stop(hospital):
    b = _mini_builder(hospital)
    with pytest.raises(DlttsError):
        b.oracle_step("STOP")


def test_reach_stop_trivial_cases():
    single = Dltts("s0", "STOP", frozenset({"s0", "STOP"}), ())
    assert reach_stop(single) == (False, ())
    no_delta = parse_dltts("s0 -> [(s1, 1, x)] act\n")
    assert reach_stop(no_delta)[0] is False


def _figure_one() -> Dltts:
    return parse_dltts(
        """
        initial: s0
        stop: STOP
        s0 -> [(s1, 1, M:0 {l1,l3})] query:Gender
        s0 -> [(s2, 1, M:1 {l2,l4,l5})] query:Gender
        s2 -> [(s3, 1, Covid:0 {l2})] query:Covid
        s2 -> [(s4, 1, Covid:1 {l4,l5})] query:Covid
        s4 -> [(s5, 1/3, NotOld {l4}), (s6, 2/3, NotOld {l5})] query:Age
        s6 -> [(STOP, 1, δ)] delta
        """
    )


def test_parse_figure_and_reach(hospital):
    d = _figure_one()
    assert validate(d) == []
    reached, runs = reach_stop(d)
    assert reached and len(runs) == 1
    assert runs[0].states == ("s0", "s2", "s4", "s6", "STOP")
    assert runs[0].probability == F(2, 3)


def test_render_parse_round_trip():
    d = _figure_one()
    again = parse_dltts(render_dltts(d))
    assert again.transitions == d.transitions
    assert again.states == d.states


def test_render_parse_round_trip_with_provenance(enterprise):
    # profile-sourced branch labels (P_b markers) survive the round trip
    text = (enterprise.base_dir / "attack_b.dltts").read_text()
    d = parse_dltts(text, "B")
    again = parse_dltts(render_dltts(d), "B")
    assert again.transitions == d.transitions
    sources = {b.label.source for t in d.transitions for b in t.branches}
    assert sources == {"db", "b"}


def test_run_tree_probabilities_sum_to_one():
    d = _figure_one()

    def mass(state, chooser):
        outs = d.outgoing(state)
        if not outs:
            return F(1)
        t = outs[chooser % len(outs)]
        return sum(b.prob * mass(b.to, chooser) for b in t.branches)

    for chooser in (0, 1):
        assert mass(d.initial, chooser) == 1


def test_validate_rejects_each_mutation():
    d = _figure_one()
    assert validate(d) == []

    # probability sum broken
    t = d.transitions[4]
    bad_branches = (replace(t.branches[0], prob=F(1, 2)),) + t.branches[1:]
    bad = replace(d, transitions=d.transitions[:4] + (replace(t, branches=bad_branches),) + d.transitions[5:])
    assert any("sum" in p for p in validate(bad))

    # outgoing edge from Stop
    extra = Transition("STOP", "query", (Branch("s1", F(1), Label()),))
    bad = replace(d, transitions=d.transitions + (extra,))
    assert any("Stop has an outgoing" in p for p in validate(bad))

    # duplicated distribution from one state
    bad = replace(d, transitions=d.transitions + (d.transitions[0],))
    assert any("share one distribution" in p for p in validate(bad))

    # delta with probability != 1 is impossible by type (prob sums to 1 with
    # one branch), so break the delta target instead
    t = d.transitions[5]
    bad_delta = replace(t, branches=(replace(t.branches[0], to="s1"),))
    bad = replace(d, transitions=d.transitions[:5] + (bad_delta,))
    assert any("delta" in p for p in validate(bad))

    # non-positive probability
    t = d.transitions[4]
    bad_branches = (
        replace(t.branches[0], prob=F(0)),
        replace(t.branches[1], prob=F(1)),
    )
    bad = replace(d, transitions=d.transitions[:4] + (replace(t, branches=bad_branches),) + d.transitions[5:])
    assert any("non-positive" in p for p in validate(bad))


def test_validate_tag_tightness_mutation(hospital, main_pattern):
    b = _mini_builder(hospital)
    p = main_pattern("(John,*,M,*,*)")
    b.add_transition(
        "s0", "q", [("s1", F(1), Label(tuples=frozenset({p})))]
    )
    d = b.build()
    assert validate(d) == []
    broken_tags = dict(d.tags)
    broken_tags["s1"] = frozenset({TOP})
    bad = replace(d, tags=broken_tags)
    assert any("tight" in p for p in validate(bad))


@pytest.fixture(scope="module")
def viral_mechanism():
    return Mechanism.from_rows(
        "viral_query",
        {
            "l4": {"Viral-Infection": F(1, 3), "no-answer": F(2, 3)},
            "l5": {"Viral-Infection": F(2, 3), "no-answer": F(1, 3)},
        },
    )


def test_epsilon_equivalent_labels_figure_state(viral_mechanism):
    from privtrace.privacy import parse_epsilon

    d = _figure_one()
    classes = epsilon_equivalent_labels(
        d, "s4", viral_mechanism, parse_epsilon("ln(2)"), alpha="Viral-Infection"
    )
    assert len(classes) == 1 and len(classes[0]) == 2
    classes0 = epsilon_equivalent_labels(
        d, "s4", viral_mechanism, 0.0, alpha="Viral-Infection"
    )
    assert len(classes0) == 2


def test_epsilon_equivalent_single_branch(viral_mechanism):
    d = parse_dltts("s0 -> [(s1, 1, x {l4})] act\n")
    classes = epsilon_equivalent_labels(
        d, "s0", viral_mechanism, 0.0, alpha="Viral-Infection"
    )
    assert len(classes) == 1 and len(classes[0]) == 1


def test_epsilon_equivalent_explicit_instance_mapping(viral_mechanism):
    from privtrace.privacy import parse_epsilon

    # labels carry no line ids; map them to mechanism inputs by text
    d = parse_dltts("s0 -> [(s1, 1/3, old-answer), (s2, 2/3, young-answer)] act\n")
    classes = epsilon_equivalent_labels(
        d, "s0", viral_mechanism, parse_epsilon("ln(2)"),
        alpha="Viral-Infection",
        instance_for={"old-answer": "l4", "young-answer": "l5"},
    )
    assert len(classes) == 1
    with pytest.raises(DlttsError):
        epsilon_equivalent_labels(
            d, "s0", viral_mechanism, 0.0, alpha="Viral-Infection"
        )


def test_builder_rejects_bad_probability_sums(hospital):
    b = _mini_builder(hospital)
    with pytest.raises(DlttsError):
        b.add_transition(
            "s0", "q",
            [("a", F(1, 2), Label()), ("b", F(1, 3), Label())],
        )
