"""Mechanisms as finite probabilistic maps, and the epsilon calculus.

Every probability is an exact Fraction.  Epsilon values are reported in the
exact form scale*ln(ratio) (both rationals) whenever they arise from rational
probabilities; comparisons between two exact epsilons use integer
cross-powers and are exact.  Comparisons against a plain float epsilon use
an absolute tolerance of 1e-9.

Scanning never raises on zero-probability asymmetries: they yield a
distinguished "unbounded" result value.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .metrics import IntervalMeasureMode, hamming, rho
from .schema import Row
from .values import Atom, TaxonomyTree

EPS_FLOAT_TOL = 1e-9

_MAX_EXHAUSTIVE_OUTPUTS = 20


class PrivacyError(ValueError):
    pass


@dataclass(frozen=True)
class Mechanism:
    """A finite map from input instances to exact output distributions."""

    name: str
    inputs: tuple
    outputs: tuple
    table: Mapping[tuple, Fraction]

    def __post_init__(self) -> None:
        for v in self.inputs:
            total = Fraction(0)
            for o in self.outputs:
                p = self.table.get((v, o), Fraction(0))
                if p < 0 or p > 1:
                    raise PrivacyError(f"{self.name}: probability {p} out of range")
                total += p
            if total != 1:
                raise PrivacyError(
                    f"{self.name}: input {v!r} distributes {total}, not 1"
                )

    @classmethod
    def from_rows(cls, name: str, rows: Mapping, outputs: Sequence | None = None):
        """Build from {input: {output: prob}}; probs accept Fraction strings."""
        table = {}
        outs: list = list(outputs) if outputs is not None else []
        for v, dist in rows.items():
            for o, p in dist.items():
                if o not in outs:
                    outs.append(o)
                table[(v, o)] = Fraction(p)
        return cls(name, tuple(rows), tuple(outs), table)

    def prob(self, v, o) -> Fraction:
        return self.table.get((v, o), Fraction(0))

    def support(self, v) -> tuple:
        return tuple(o for o in self.outputs if self.prob(v, o) > 0)

    def event_prob(self, v, event: Iterable) -> Fraction:
        return sum((self.prob(v, o) for o in event), Fraction(0))


@dataclass(frozen=True)
class EpsilonResult:
    """An epsilon bound: value = scale * ln(ratio), exact where possible.

    `unbounded` marks a zero-probability asymmetry (no finite epsilon);
    `both_zero` flags the 0-vs-0 convention (epsilon 0 by agreement).
    """

    scale: Fraction | None = None
    ratio: Fraction | None = None
    unbounded: bool = False
    both_zero: bool = False
    witness: tuple | None = None

    @property
    def value(self) -> float:
        if self.unbounded:
            return math.inf
        if self.ratio is None or self.ratio == 1 or self.scale == 0:
            return 0.0
        return float(self.scale) * (
            math.log(self.ratio.numerator) - math.log(self.ratio.denominator)
        )

    def exact_str(self) -> str:
        if self.unbounded:
            return "unbounded"
        if self.ratio is None:
            return "0"
        ln = f"ln({self.ratio.numerator}/{self.ratio.denominator})"
        if self.scale == 1:
            return ln
        return f"({self.scale.numerator}/{self.scale.denominator})*{ln}"

    def __str__(self) -> str:
        if self.unbounded:
            return "unbounded"
        return f"{self.exact_str()} ≈ {self.value:.12g}"

    def witness_str(self) -> str:
        if self.witness is None or self.witness[0] is None:
            return "none"
        parts = [repr(w) if isinstance(w, str) else str(w) for w in self.witness]
        return "(" + ", ".join(parts) + ")"


def _exceeds(a: EpsilonResult, b: EpsilonResult) -> bool:
    """a.value > b.value, exactly when both are exact."""
    if a.unbounded:
        return not b.unbounded
    if b.unbounded:
        return False
    ra = a.ratio if a.ratio is not None else Fraction(1)
    rb = b.ratio if b.ratio is not None else Fraction(1)
    sa = a.scale if a.scale is not None else Fraction(1)
    sb = b.scale if b.scale is not None else Fraction(1)
    if ra == 1 or sa == 0:
        return False
    if rb == 1 or sb == 0:
        return True
    # sa*ln(ra) > sb*ln(rb)  <=>  ra^(sa_n*sb_d) > rb^(sb_n*sa_d)
    return ra ** (sa.numerator * sb.denominator) > rb ** (sb.numerator * sa.denominator)


def eps_at_least_ln(eps, ratio: Fraction) -> bool:
    """Is eps >= ln(ratio)?  Exact for EpsilonResult/Fraction-ratio epsilons,
    tolerance EPS_FLOAT_TOL for plain floats."""
    if ratio <= 1:
        return True
    if isinstance(eps, EpsilonResult):
        if eps.unbounded:
            return True
        if eps.ratio is None or eps.ratio == 1 or eps.scale == 0:
            return False
        s = eps.scale
        return eps.ratio**s.numerator >= ratio**s.denominator
    ln_ratio = math.log(ratio.numerator) - math.log(ratio.denominator)
    return ln_ratio <= float(eps) + EPS_FLOAT_TOL


def is_eps_indistinguishable(m: Mechanism, v, v2, alpha, eps) -> bool:
    """Both bounds p <= e^eps * p' and p' <= e^eps * p for output alpha."""
    p, p2 = m.prob(v, alpha), m.prob(v2, alpha)
    if p == p2:
        return True
    if p == 0 or p2 == 0:
        return isinstance(eps, EpsilonResult) and eps.unbounded
    ratio = max(p, p2) / min(p, p2)
    return eps_at_least_ln(eps, ratio)


def min_indist_epsilon(m: Mechanism, v, v2, alpha) -> EpsilonResult:
    """The minimal epsilon making v and v' indistinguishable wrt alpha:
    |ln(p/p')|, reported exactly as ln(max/min)."""
    p, p2 = m.prob(v, alpha), m.prob(v2, alpha)
    witness = (v, v2, alpha)
    if p == 0 and p2 == 0:
        return EpsilonResult(
            scale=Fraction(1), ratio=Fraction(1), both_zero=True, witness=witness
        )
    if p == 0 or p2 == 0:
        return EpsilonResult(unbounded=True, witness=witness)
    ratio = max(p, p2) / min(p, p2)
    return EpsilonResult(scale=Fraction(1), ratio=ratio, witness=witness)


def _subsets(outputs: Sequence) -> Iterable[tuple]:
    if len(outputs) > _MAX_EXHAUSTIVE_OUTPUTS:
        raise PrivacyError(
            f"{len(outputs)} outputs exceed the exhaustive subset scan limit"
        )
    for r in range(1, len(outputs) + 1):
        yield from itertools.combinations(outputs, r)


def _shares_output(m: Mechanism, v, v2) -> bool:
    return bool(set(m.support(v)) & set(m.support(v2)))


def min_ldp_epsilon(m: Mechanism) -> EpsilonResult:
    """Minimal epsilon for the local-privacy bound over every input pair
    sharing a positive-probability output and every output subset S.

    Exhaustive over subsets; no analytic shortcut is assumed.
    """
    best = EpsilonResult(
        scale=Fraction(1), ratio=Fraction(1), witness=(None, None, ())
    )
    for v, v2 in itertools.combinations(m.inputs, 2):
        if not _shares_output(m, v, v2):
            continue
        for S in _subsets(m.outputs):
            a, b = m.event_prob(v, S), m.event_prob(v2, S)
            for hi, lo, pair in ((a, b, (v, v2)), (b, a, (v2, v))):
                if hi == 0:
                    continue
                if lo == 0:
                    return EpsilonResult(unbounded=True, witness=(*pair, S))
                cand = EpsilonResult(
                    scale=Fraction(1), ratio=hi / lo, witness=(*pair, S)
                )
                if _exceeds(cand, best):
                    best = cand
    return best


class Adjacency:
    """A symmetric nonnegative distance over mechanism inputs; None marks an
    undefined (uncomparable) pair."""

    def distance(self, a, b) -> Fraction | None:
        raise NotImplementedError


def _as_cells(x) -> tuple:
    if isinstance(x, Row):
        return x.cells
    if isinstance(x, tuple):
        return x
    return (Atom(str(x)),)


@dataclass(frozen=True)
class HammingAdjacency(Adjacency):
    """Generalized Hamming count; opaque atoms count as 1-tuples."""

    def distance(self, a, b) -> Fraction | None:
        d = hamming(_as_cells(a), _as_cells(b))
        return None if d is None else Fraction(d)


@dataclass(frozen=True)
class RhoAdjacency(Adjacency):
    """Value-wise tuple distance rho under the selected interval mode."""

    mode: IntervalMeasureMode = IntervalMeasureMode.INTEGER_SET
    taxonomies: Mapping[str, TaxonomyTree] | None = None
    normalizer: Fraction | None = None

    def distance(self, a, b) -> Fraction | None:
        return rho(
            [_as_cells(a)],
            [_as_cells(b)],
            self.mode,
            taxonomies=self.taxonomies,
            normalizer=self.normalizer,
        )


@dataclass(frozen=True)
class TableAdjacency(Adjacency):
    """Explicit symmetric distance table over input pairs."""

    entries: Mapping[frozenset, Fraction] = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple]):
        return cls({frozenset((a, b)): Fraction(d) for a, b, d in pairs})

    def distance(self, a, b) -> Fraction | None:
        if a == b:
            return Fraction(0)
        return self.entries.get(frozenset((a, b)))


def min_dp_epsilon(
    m: Mechanism,
    adjacency: Adjacency,
    pairs: Iterable[tuple] | None = None,
) -> EpsilonResult:
    """Minimal epsilon with Prob[M(D) in S] <= e^(eps*dist(D,D')) * Prob[M(D') in S]
    for every supplied pair and every output subset; pairs default to all
    unordered input pairs."""
    if pairs is None:
        pairs = itertools.combinations(m.inputs, 2)
    best = EpsilonResult(
        scale=Fraction(1), ratio=Fraction(1), witness=(None, None, ())
    )
    for v, v2 in pairs:
        d = adjacency.distance(v, v2)
        if d is None:
            raise PrivacyError(f"adjacency undefined on pair ({v!r}, {v2!r})")
        for S in _subsets(m.outputs):
            a, b = m.event_prob(v, S), m.event_prob(v2, S)
            for hi, lo, pair in ((a, b, (v, v2)), (b, a, (v2, v))):
                if hi == 0:
                    continue
                if lo == 0:
                    return EpsilonResult(unbounded=True, witness=(*pair, S))
                ratio = hi / lo
                if ratio == 1:
                    continue
                if d == 0:
                    return EpsilonResult(unbounded=True, witness=(*pair, S))
                cand = EpsilonResult(scale=1 / d, ratio=ratio, witness=(*pair, S))
                if _exceeds(cand, best):
                    best = cand
    return best


def min_scaled_indist_epsilon(
    m: Mechanism, v, v2, alpha, dist: Fraction
) -> EpsilonResult:
    """Minimal epsilon with both bounds p <= e^(eps*dist) * p'; the core of
    the distance-scaled indistinguishability notions."""
    base = min_indist_epsilon(m, v, v2, alpha)
    if base.unbounded or base.ratio == 1:
        return base
    if dist == 0:
        return EpsilonResult(unbounded=True, witness=base.witness)
    return EpsilonResult(scale=Fraction(1) / dist, ratio=base.ratio, witness=base.witness)


def min_eps_rho_indist(
    m: Mechanism,
    v,
    v2,
    alpha,
    mode: IntervalMeasureMode = IntervalMeasureMode.INTEGER_SET,
    *,
    tuples: tuple | None = None,
    taxonomies: Mapping[str, TaxonomyTree] | None = None,
    normalizer: Fraction | None = None,
) -> EpsilonResult:
    """|ln(p/p')| / rho(t,t'): the rho-scaled minimal epsilon.  `tuples`
    supplies the value tuples when the mechanism inputs are opaque keys."""
    t, t2 = tuples if tuples is not None else (v, v2)
    d = rho(
        [_as_cells(t)],
        [_as_cells(t2)],
        mode,
        taxonomies=taxonomies,
        normalizer=normalizer,
    )
    if d is None:
        raise PrivacyError("tuples are uncomparable; rho is undefined")
    return min_scaled_indist_epsilon(m, v, v2, alpha, d)


def min_eps_hamming_indist(
    m: Mechanism, v, v2, alpha, *, tuples: tuple | None = None
) -> EpsilonResult:
    """|ln(p/p')| / d_h(t,t'): the Hamming-scaled counterpart."""
    t, t2 = tuples if tuples is not None else (v, v2)
    d = hamming(_as_cells(t), _as_cells(t2))
    if d is None:
        raise PrivacyError("tuples are uncomparable; the Hamming count is undefined")
    return min_scaled_indist_epsilon(m, v, v2, alpha, Fraction(d))


@dataclass(frozen=True)
class RandomizedResponse:
    """The two-coin randomized response mechanism.

    `full` maps the 8 explicit instances (X, F1, F2) deterministically;
    `marginal` is the coin-marginalized view (X alone, output probabilities
    3/4 / 1/4) that the privacy bounds are stated over.  The object itself
    quacks like the marginal mechanism.
    """

    full: Mechanism
    marginal: Mechanism

    @property
    def name(self) -> str:
        return self.marginal.name

    @property
    def inputs(self) -> tuple:
        return self.marginal.inputs

    @property
    def outputs(self) -> tuple:
        return self.marginal.outputs

    @property
    def table(self) -> Mapping[tuple, Fraction]:
        return self.marginal.table

    def prob(self, v, o) -> Fraction:
        return self.marginal.prob(v, o)

    def support(self, v) -> tuple:
        return self.marginal.support(v)

    def event_prob(self, v, event: Iterable) -> Fraction:
        return self.marginal.event_prob(v, event)


def build_rr() -> RandomizedResponse:
    """Randomized response: output X if F1=H, True if F1=T,F2=H, else False."""
    one = Fraction(1)
    full_table = {}
    instances = []
    for x in ("True", "False"):
        for f1 in ("H", "T"):
            for f2 in ("H", "T"):
                if f1 == "H":
                    out = x
                elif f2 == "H":
                    out = "True"
                else:
                    out = "False"
                inst = (x, f1, f2)
                instances.append(inst)
                full_table[(inst, out)] = one
    full = Mechanism("rr-instances", tuple(instances), ("True", "False"), full_table)
    marginal = Mechanism.from_rows(
        "rr",
        {
            "True": {"True": Fraction(3, 4), "False": Fraction(1, 4)},
            "False": {"True": Fraction(1, 4), "False": Fraction(3, 4)},
        },
        outputs=("True", "False"),
    )
    return RandomizedResponse(full=full, marginal=marginal)


def parse_epsilon(text: str):
    """Parse an epsilon literal: `ln(a/b)`, `(c/d)*ln(a/b)`, a fraction, or
    a decimal.  Exact forms return EpsilonResult, decimals return float."""
    text = text.strip().replace(" ", "")
    m = re.fullmatch(r"(?:\((-?\d+/\d+|-?\d+)\)\*)?ln\((\d+(?:/\d+)?)\)", text)
    if m:
        scale = Fraction(m.group(1)) if m.group(1) else Fraction(1)
        ratio = Fraction(m.group(2))
        if ratio < 1 or scale < 0:
            raise PrivacyError(f"epsilon {text!r} is negative")
        return EpsilonResult(scale=scale, ratio=ratio)
    try:
        frac = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise PrivacyError(f"cannot parse epsilon {text!r}") from None
    if frac < 0:
        raise PrivacyError("epsilon must be nonnegative")
    return float(frac)
