"""Tagged probabilistic transition systems.

A system has states carrying *tags* (sets of signed ground tuples: what the
querying agent knows so far), probabilistic transitions whose branches carry
*labels* (what each possible answer teaches), a distinguished initial state,
and a Stop state reached only through the violation action `delta`.

Tags are kept *tight*: the tag of a branch target is the saturated tag of
the source plus the branch label's tuples.  Saturation closes a tag under
three deduction rules against the external bases:

  R1  identifier join: a pattern carrying an identifier value absorbs an
      external row with the same identifier (all shared concrete cells must
      agree), merging the two column sets.
  R2  taxonomy refinement: a tuple's taxonomy cell moves down to an external
      count row's strictly-deeper node when the count is exactly 1 and every
      shared join column agrees concretely.
  R3  identity linkage: a pattern's identifier cells propagate onto the
      unique external row matching all its concrete non-identifier cells.

External tables carrying a Count column are aggregates, not records: only
R2 reads them, and the record-linkage rules R1/R3 skip them.

All three fire on single tag premises (uniqueness in R3 is counted over the
fixed external base), so saturation is monotone and idempotent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from . import privacy
from .metrics import IntervalMeasureMode, rho
from .schema import (
    ColumnSchema,
    DataTable,
    PrivacyPolicy,
    Row,
    TOP,
    TuplePattern,
)
from .values import (
    ColumnClass,
    Number,
    TaxonomyTree,
    Taxon,
    Wildcard,
    split_top_level,
)

DELTA = "delta"

Tag = frozenset


class DlttsError(ValueError):
    pass


@dataclass(frozen=True)
class Label:
    """What one branch teaches: free text, the matching line ids, the ground
    tuples added to the target's tag, and the probability provenance."""

    text: str = ""
    lines: frozenset[str] = frozenset()
    tuples: frozenset[TuplePattern] = frozenset()
    source: str = "db"

    def __str__(self) -> str:
        parts = [self.text] if self.text else []
        if self.lines:
            parts.append("{" + ",".join(sorted(self.lines)) + "}")
        return " ".join(parts)


@dataclass(frozen=True)
class Branch:
    to: str
    prob: Fraction
    label: Label = Label()


@dataclass(frozen=True)
class Transition:
    source: str
    action: str
    branches: tuple[Branch, ...]


@dataclass(frozen=True)
class Dltts:
    initial: str
    stop: str
    states: frozenset[str]
    transitions: tuple[Transition, ...]
    tags: Mapping[str, Tag] = field(default_factory=dict)
    saturated: Mapping[str, Tag] = field(default_factory=dict)
    state_probs: Mapping[str, Fraction] = field(default_factory=dict)

    def outgoing(self, state: str) -> tuple[Transition, ...]:
        return tuple(t for t in self.transitions if t.source == state)

    def incoming(self, state: str) -> tuple[tuple[Transition, Branch], ...]:
        return tuple(
            (t, b)
            for t in self.transitions
            for b in t.branches
            if b.to == state
        )

    def label(self, source: str, target: str) -> Label | None:
        for t in self.transitions:
            for b in t.branches:
                if t.source == source and b.to == target:
                    return b.label
        return None


def _column_registry(
    externals: Sequence[DataTable],
    columns: Iterable[ColumnSchema] | None,
) -> dict[str, ColumnSchema]:
    registry: dict[str, ColumnSchema] = {}
    for col in columns or ():
        registry.setdefault(col.name, col)
    for table in externals:
        for col in table.columns:
            registry.setdefault(col.name, col)
    return registry


def _merged_taxonomies(
    externals: Sequence[DataTable],
    taxonomies: Mapping[str, TaxonomyTree] | None,
) -> dict[str, TaxonomyTree]:
    merged = dict(taxonomies or {})
    for table in externals:
        for name, tree in table.taxonomies.items():
            merged.setdefault(name, tree)
    return merged


def _row_cell(table: DataTable, row: Row, column: str):
    return row.cells[table.column_index(column)]


def _merge(p: TuplePattern, table: DataTable, row: Row) -> TuplePattern:
    """Union-of-columns merge: p's concrete cells win, the row fills p's
    wildcards on shared columns and contributes its remaining columns."""
    table_cols = set(table.column_names())
    columns = list(p.columns)
    cells = []
    for c, v in zip(p.columns, p.cells):
        if isinstance(v, Wildcard) and c in table_cols:
            cells.append(_row_cell(table, row, c))
        else:
            cells.append(v)
    for c in table.column_names():
        if c not in p.columns:
            columns.append(c)
            cells.append(_row_cell(table, row, c))
    return TuplePattern(tuple(columns), tuple(cells), False)


def _count_column(table: DataTable) -> str | None:
    for col in table.columns:
        if col.name.lower() == "count" and col.cls is ColumnClass.NUMERICAL:
            return col.name
    return None


def _r1_join(
    p: TuplePattern,
    table: DataTable,
    registry: Mapping[str, ColumnSchema],
) -> list[TuplePattern]:
    if _count_column(table) is not None:
        return []
    shared = [c for c in p.columns if c in set(table.column_names())]
    if not shared:
        return []
    out = []
    for row in table.rows:
        id_hit = False
        for c in shared:
            pc = p.cell(c)
            if isinstance(pc, Wildcard):
                continue
            if pc != _row_cell(table, row, c):
                break
            col = registry.get(c)
            if col is not None and col.group == "identifier":
                id_hit = True
        else:
            if id_hit:
                out.append(_merge(p, table, row))
    return out


def _r2_refine(
    p: TuplePattern,
    table: DataTable,
    taxonomies: Mapping[str, TaxonomyTree],
) -> list[TuplePattern]:
    count_col = _count_column(table)
    if count_col is None:
        return []
    table_cols = set(table.column_names())
    out = []
    for c, x in p.concrete_items():
        if not isinstance(x, Taxon) or c not in table_cols:
            continue
        tree = taxonomies.get(x.tree)
        if tree is None:
            continue
        join_cols = [
            jc for jc in p.columns if jc in table_cols and jc not in (c, count_col)
        ]
        for row in table.rows:
            y = _row_cell(table, row, c)
            if not isinstance(y, Taxon) or y.tree != x.tree:
                continue
            if not tree.is_strict_descendant(y.node, x.node):
                continue
            count = _row_cell(table, row, count_col)
            if not isinstance(count, Number) or count.value != 1:
                continue
            hits = 0
            ok = True
            for jc in join_cols:
                pc = p.cell(jc)
                if isinstance(pc, Wildcard) or pc != _row_cell(table, row, jc):
                    ok = False
                    break
                hits += 1
            if ok and hits >= 1:
                out.append(p.replace_cell(c, y))
    return out


def _r3_link(
    p: TuplePattern,
    table: DataTable,
    registry: Mapping[str, ColumnSchema],
) -> list[TuplePattern]:
    if _count_column(table) is not None:
        return []

    def is_id(c: str) -> bool:
        col = registry.get(c)
        return col is not None and col.group == "identifier"

    id_cells = [(c, v) for c, v in p.concrete_items() if is_id(c)]
    other = [(c, v) for c, v in p.concrete_items() if not is_id(c)]
    if not id_cells or not other:
        return []
    table_cols = set(table.column_names())
    join = [(c, v) for c, v in other if c in table_cols]
    if not join:
        return []
    matches = [
        row
        for row in table.rows
        if all(_row_cell(table, row, c) == v for c, v in join)
    ]
    if len(matches) != 1:
        return []
    return [_merge(p, table, matches[0])]


def saturate(
    tag: Tag,
    externals: Sequence[DataTable] = (),
    *,
    columns: Iterable[ColumnSchema] | None = None,
    taxonomies: Mapping[str, TaxonomyTree] | None = None,
    max_rounds: int = 1000,
) -> Tag:
    """Least fixpoint of R1-R3 over the tag against the external bases.

    Raises DlttsError if the fixpoint is not reached within `max_rounds`
    (which would signal a rule bug: the closure is finite by construction).
    """
    registry = _column_registry(externals, columns)
    trees = _merged_taxonomies(externals, taxonomies)
    current = set(tag)
    for _ in range(max_rounds + 1):
        new: set[TuplePattern] = set()
        for p in current:
            if p.negative or not p.columns:
                continue
            for table in externals:
                for q in _r1_join(p, table, registry):
                    if q not in current:
                        new.add(q)
                for q in _r2_refine(p, table, trees):
                    if q not in current:
                        new.add(q)
                for q in _r3_link(p, table, registry):
                    if q not in current:
                        new.add(q)
        if not new:
            return frozenset(current)
        current |= new
    raise DlttsError(f"saturation did not reach a fixpoint in {max_rounds} rounds")


def _matches_negative(p: TuplePattern, negative: TuplePattern) -> bool:
    """Does positive p confirm every concrete cell of the negative pattern?"""
    for c, v in negative.concrete_items():
        pc = p.cell(c)
        if pc is None or isinstance(pc, Wildcard) or pc != v:
            return False
    return True


def check_consistency(tag: Tag, policy: PrivacyPolicy) -> bool:
    """False iff some positive tag tuple matches a policy pattern at every
    non-wildcard position, or the tag holds a tuple and its own negation."""
    positives = [p for p in tag if not p.negative and p.columns]
    for p in positives:
        for n in policy.patterns:
            if _matches_negative(p, n):
                return False
        if replace(p, negative=True) in tag:
            return False
    return True


class OracleVerdict(Enum):
    CONTINUE = "continue"
    VIOLATION = "violation"
    EPSILON_VIOLATION = "epsilon-violation"


def _knowledge_tuples(tag: Tag) -> list[tuple]:
    """Star-free positive tag tuples, as plain cell tuples for rho."""
    return [
        p.cells for p in tag if not p.negative and p.columns and p.is_ground()
    ]


def oracle_verdict(
    saturated_tag: Tag,
    policy: PrivacyPolicy,
    secret_set: Iterable[Sequence] | None = None,
    epsilon: Fraction | None = None,
    mode: IntervalMeasureMode = IntervalMeasureMode.INTEGER_SET,
    *,
    taxonomies: Mapping[str, TaxonomyTree] | None = None,
    normalizer=None,
) -> OracleVerdict:
    if not check_consistency(saturated_tag, policy):
        return OracleVerdict.VIOLATION
    if epsilon is not None and secret_set is not None:
        knowledge = _knowledge_tuples(saturated_tag)
        r = rho(
            knowledge,
            list(secret_set),
            mode,
            taxonomies=taxonomies,
            normalizer=normalizer,
        )
        if r is not None and r <= epsilon:
            return OracleVerdict.EPSILON_VIOLATION
    return OracleVerdict.CONTINUE


class DlttsBuilder:
    """Single-owner construction of a tagged system.

    Tags are computed tightly from branch labels, saturated eagerly at state
    creation, and cached.  `oracle_step` checks a state and, on a violation,
    installs the `delta` transition to Stop as its only outgoing transition.
    """

    def __init__(
        self,
        *,
        policy: PrivacyPolicy | None = None,
        externals: Sequence[DataTable] = (),
        columns: Iterable[ColumnSchema] | None = None,
        taxonomies: Mapping[str, TaxonomyTree] | None = None,
        initial: str = "s0",
        stop: str = "STOP",
    ) -> None:
        self.policy = policy or PrivacyPolicy(())
        self.externals = tuple(externals)
        self.columns = tuple(columns or ())
        self.taxonomies = _merged_taxonomies(self.externals, taxonomies)
        self.initial = initial
        self.stop = stop
        self.transitions: list[Transition] = []
        self.tags: dict[str, Tag] = {initial: frozenset({TOP})}
        self.saturated: dict[str, Tag] = {initial: self._saturate(frozenset({TOP}))}
        self.state_probs: dict[str, Fraction] = {initial: Fraction(1)}
        self.closed: set[str] = set()

    def _saturate(self, tag: Tag) -> Tag:
        return saturate(
            tag, self.externals, columns=self.columns, taxonomies=self.taxonomies
        )

    def add_transition(
        self,
        source: str,
        action: str,
        branches: Iterable[tuple[str, Fraction, Label]],
    ) -> list[str]:
        if source == self.stop:
            raise DlttsError("Stop has no outgoing transitions")
        if source not in self.tags:
            raise DlttsError(f"unknown source state {source!r}")
        if source in self.closed:
            raise DlttsError(f"state {source!r} is closed by a violation")
        branch_objs = []
        new_states = []
        total = Fraction(0)
        for to, prob, label in branches:
            prob = Fraction(prob)
            if prob <= 0:
                raise DlttsError(f"branch probability {prob} is not positive")
            total += prob
            if to in self.tags or to == self.stop or to == source:
                raise DlttsError(f"branch target {to!r} already exists")
            branch_objs.append(Branch(to, prob, label))
            new_states.append(to)
        if not branch_objs:
            raise DlttsError("transition needs at least one branch")
        if total != 1:
            raise DlttsError(f"branch probabilities sum to {total}, not 1")
        if len({b.to for b in branch_objs}) != len(branch_objs):
            raise DlttsError("duplicate branch target within one transition")
        self.transitions.append(Transition(source, action, tuple(branch_objs)))
        for b in branch_objs:
            tag = self.saturated[source] | b.label.tuples
            self.tags[b.to] = frozenset(tag)
            self.saturated[b.to] = self._saturate(frozenset(tag))
            prob = self.state_probs[source] * b.prob
            self.state_probs[b.to] = max(self.state_probs.get(b.to, prob), prob)
        return new_states

    def oracle_step(
        self,
        state: str,
        *,
        secret_set: Iterable[Sequence] | None = None,
        epsilon: Fraction | None = None,
        mode: IntervalMeasureMode = IntervalMeasureMode.INTEGER_SET,
        normalizer=None,
    ) -> OracleVerdict:
        if state == self.stop:
            raise DlttsError("the oracle never examines Stop")
        verdict = oracle_verdict(
            self.saturated[state],
            self.policy,
            secret_set,
            epsilon,
            mode,
            taxonomies=self.taxonomies,
            normalizer=normalizer,
        )
        if verdict is not OracleVerdict.CONTINUE:
            if any(t.source == state for t in self.transitions):
                raise DlttsError(
                    f"violating state {state!r} already has outgoing transitions"
                )
            self.transitions.append(
                Transition(state, DELTA, (Branch(self.stop, Fraction(1), Label("δ")),))
            )
            self.closed.add(state)
        return verdict

    def build(self) -> Dltts:
        states = {self.initial, self.stop} | set(self.tags)
        for t in self.transitions:
            states.add(t.source)
            states.update(b.to for b in t.branches)
        return Dltts(
            initial=self.initial,
            stop=self.stop,
            states=frozenset(states),
            transitions=tuple(self.transitions),
            tags=dict(self.tags),
            saturated=dict(self.saturated),
            state_probs=dict(self.state_probs),
        )


def oracle_step(builder: DlttsBuilder, state: str, **kwargs) -> OracleVerdict:
    """Module-level convenience wrapper over DlttsBuilder.oracle_step."""
    return builder.oracle_step(state, **kwargs)


@dataclass(frozen=True)
class Run:
    states: tuple[str, ...]
    actions: tuple[str, ...]
    probability: Fraction


def reach_stop(dltts: Dltts) -> tuple[bool, tuple[Run, ...]]:
    """All simple runs from the initial state that end in Stop, each with the
    exact product of its branch probabilities."""
    runs: list[Run] = []

    def walk(state, path, actions, prob, seen):
        if state == dltts.stop:
            runs.append(Run(tuple(path), tuple(actions), prob))
            return
        for t in dltts.outgoing(state):
            for b in t.branches:
                if b.to in seen:
                    continue
                walk(
                    b.to,
                    path + [b.to],
                    actions + [t.action],
                    prob * b.prob,
                    seen | {b.to},
                )

    walk(dltts.initial, [dltts.initial], [], Fraction(1), {dltts.initial})
    runs.sort(key=lambda r: (-r.probability, r.states))
    return (bool(runs), tuple(runs))


def validate(dltts: Dltts) -> list[str]:
    """Invariant check; empty list iff the system is well-formed."""
    problems: list[str] = []
    if dltts.initial not in dltts.states:
        problems.append(f"initial state {dltts.initial!r} not among states")
    if dltts.stop not in dltts.states:
        problems.append(f"stop state {dltts.stop!r} not among states")
    if dltts.tags.get(dltts.stop):
        problems.append("Stop carries a tag")
    seen_distr: set[tuple] = set()
    for t in dltts.transitions:
        if t.source == dltts.stop:
            problems.append("Stop has an outgoing transition")
        if t.source not in dltts.states:
            problems.append(f"transition from unknown state {t.source!r}")
        if not t.branches:
            problems.append(f"transition from {t.source!r} has no branches")
            continue
        total = Fraction(0)
        for b in t.branches:
            if b.to not in dltts.states:
                problems.append(f"branch to unknown state {b.to!r}")
            if b.prob <= 0:
                problems.append(
                    f"branch {t.source}->{b.to} has non-positive probability"
                )
            total += b.prob
        if total != 1:
            problems.append(
                f"probabilities from {t.source!r} under {t.action!r} sum to {total}"
            )
        if len({b.to for b in t.branches}) != len(t.branches):
            problems.append(f"duplicate branch target from {t.source!r}")
        key = (t.source, frozenset((b.to, b.prob) for b in t.branches))
        if key in seen_distr:
            problems.append(
                f"two transitions from {t.source!r} share one distribution"
            )
        seen_distr.add(key)
        if t.action == DELTA:
            if len(t.branches) != 1 or t.branches[0].to != dltts.stop:
                problems.append(f"delta from {t.source!r} must go to Stop alone")
            elif t.branches[0].prob != 1:
                problems.append(f"delta from {t.source!r} must have probability 1")
    if dltts.tags:
        for t in dltts.transitions:
            src_sat = dltts.saturated.get(t.source)
            if src_sat is None:
                continue
            for b in t.branches:
                if b.to == dltts.stop:
                    continue
                tag = dltts.tags.get(b.to)
                if tag is None:
                    problems.append(f"state {b.to!r} has no tag")
                elif tag != src_sat | b.label.tuples:
                    problems.append(
                        f"tag at {b.to!r} is not tight wrt {t.source!r}"
                    )
    return problems


def epsilon_equivalent_labels(
    dltts: Dltts,
    state: str,
    mechanism: "privacy.Mechanism",
    epsilon,
    *,
    alpha=None,
    instance_for: Mapping[str, object] | None = None,
) -> list[frozenset[Label]]:
    """Partition the outgoing branch labels at `state` into classes of
    pairwise epsilon-indistinguishable query instances.

    Each label maps to a mechanism input: through `instance_for` (keyed by
    label text or single line id), else by its single line id, else by its
    text.  Pairwise indistinguishability is not transitive, so classes are
    the connected components of the pairwise relation.
    """
    labels: list[Label] = []
    for t in dltts.outgoing(state):
        for b in t.branches:
            if b.label not in labels:
                labels.append(b.label)
    if not labels:
        return []

    def instance(label: Label):
        keys = []
        if len(label.lines) == 1:
            keys.append(next(iter(label.lines)))
        if label.text:
            keys.append(label.text)
        if instance_for:
            for k in keys:
                if k in instance_for:
                    return instance_for[k]
        for k in keys:
            if k in mechanism.inputs:
                return k
        raise DlttsError(f"no mechanism instance for label {label}")

    instances = {label: instance(label) for label in labels}
    if alpha is None:
        common = None
        for label in labels:
            support = set(mechanism.support(instances[label]))
            common = support if common is None else common & support
        if not common or len(common) > 1:
            raise DlttsError(
                "output alpha is ambiguous; pass it explicitly"
            )
        alpha = next(iter(common))

    parent = {label: label for label in labels}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, a in enumerate(labels):
        for b in labels[i + 1 :]:
            if privacy.is_eps_indistinguishable(
                mechanism, instances[a], instances[b], alpha, epsilon
            ):
                parent[find(a)] = find(b)
    groups: dict[Label, list[Label]] = {}
    for label in labels:
        groups.setdefault(find(label), []).append(label)
    return [frozenset(g) for g in groups.values()]


_PROVENANCE_RE = re.compile(r"^P_(\w+)\s+")


def _parse_label(text: str) -> Label:
    text = text.strip()
    source = "db"
    m = _PROVENANCE_RE.match(text)
    if m:
        source = "db" if m.group(1).lower() == "db" else m.group(1)
        text = text[m.end() :].strip()
    lines: frozenset[str] = frozenset()
    lm = re.search(r"\{([^{}]*)\}", text)
    if lm:
        lines = frozenset(
            part.strip() for part in lm.group(1).split(",") if part.strip()
        )
        text = (text[: lm.start()] + text[lm.end() :]).strip()
    return Label(text=text, lines=lines, source=source)


def parse_dltts(text: str, name: str = "dltts") -> Dltts:
    """Parse the explicit transcript format::

        initial: s0
        stop: STOP
        s0 -> [(s1, 3/4, P_db age=[30-40] {l1,l2,l3}), (s2, 1/4, ...)] query:Age

    Transition lines list branches as (target, probability, label); the
    label may start with a provenance marker (P_db, P_N, P_b, ...) and may
    embed a {line,ids} set.  The action after the bracket list is optional.
    """
    initial = "s0"
    stop = "STOP"
    transitions: list[Transition] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("initial:"):
            initial = line.split(":", 1)[1].strip()
            continue
        if line.lower().startswith("stop:"):
            stop = line.split(":", 1)[1].strip()
            continue
        if "->" not in line:
            raise DlttsError(f"{name}:{lineno}: cannot parse {raw!r}")
        source, rest = (part.strip() for part in line.split("->", 1))
        if not rest.startswith("["):
            raise DlttsError(f"{name}:{lineno}: expected a branch list")
        depth = 0
        end = None
        for i, ch in enumerate(rest):
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    end = i
                    break
        if end is None:
            raise DlttsError(f"{name}:{lineno}: unterminated branch list")
        action = rest[end + 1 :].strip() or "query"
        branches = []
        for chunk in split_top_level(rest[1:end]):
            chunk = chunk.strip()
            if not chunk:
                continue
            if not (chunk.startswith("(") and chunk.endswith(")")):
                raise DlttsError(f"{name}:{lineno}: bad branch {chunk!r}")
            parts = split_top_level(chunk[1:-1])
            if len(parts) < 2:
                raise DlttsError(f"{name}:{lineno}: branch needs target and prob")
            to = parts[0].strip()
            try:
                prob = Fraction(parts[1].strip())
            except (ValueError, ZeroDivisionError) as exc:
                raise DlttsError(f"{name}:{lineno}: bad probability") from exc
            label = _parse_label(",".join(parts[2:])) if len(parts) > 2 else Label()
            branches.append(Branch(to, prob, label))
        if not branches:
            raise DlttsError(f"{name}:{lineno}: empty branch list")
        transitions.append(Transition(source, action, tuple(branches)))
    states = {initial, stop}
    for t in transitions:
        states.add(t.source)
        states.update(b.to for b in t.branches)
    return Dltts(
        initial=initial,
        stop=stop,
        states=frozenset(states),
        transitions=tuple(transitions),
    )


def render_dltts(dltts: Dltts) -> str:
    """Serialize back to the transcript format (round-trips)."""
    out = [f"initial: {dltts.initial}", f"stop: {dltts.stop}"]
    for t in dltts.transitions:
        branches = []
        for b in t.branches:
            label = str(b.label)
            if b.label.source != "db":
                label = f"P_{b.label.source} {label}".strip()
            elif label:
                label = f"P_db {label}"
            part = f"({b.to}, {b.prob}" + (f", {label})" if label else ")")
            branches.append(part)
        out.append(f"{t.source} -> [{', '.join(branches)}] {t.action}")
    return "\n".join(out) + "\n"
