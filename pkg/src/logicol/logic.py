"""Boolean query algebra over atomic sub-queries.

Every query is one of seven fixed templates over at most three atoms.
Relations between queries (subset / exclusion) are decided by enumerating
truth assignments over the union of their atoms, which is at most 2**6 rows.
"""

from __future__ import annotations

import enum
import functools
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class DatasetIntegrityError(ValueError):
    """Raised when a query references atoms or documents that do not exist."""


class Template(str, enum.Enum):
    ATOM = "A"
    AND = "A&B"
    OR = "A|B"
    DIFF = "A-B"
    AND3 = "A&B&C"
    AND_DIFF = "A&B-C"
    OR3 = "A|B|C"

    @property
    def arity(self) -> int:
        return _ARITY[self]

    @property
    def category(self) -> str:
        """Coarse connective family used for per-template reporting."""
        return _CATEGORY[self]


_ARITY = {
    Template.ATOM: 1,
    Template.AND: 2,
    Template.OR: 2,
    Template.DIFF: 2,
    Template.AND3: 3,
    Template.AND_DIFF: 3,
    Template.OR3: 3,
}

_CATEGORY = {
    Template.ATOM: "None",
    Template.AND: "Intersection",
    Template.AND3: "Intersection",
    Template.DIFF: "Negation",
    Template.AND_DIFF: "Negation",
    Template.OR: "Union",
    Template.OR3: "Union",
}

PAIR_TEMPLATES = (Template.AND, Template.OR, Template.DIFF)
TRIPLE_TEMPLATES = (Template.AND3, Template.AND_DIFF, Template.OR3)
NEGATION_TEMPLATES = (Template.DIFF, Template.AND_DIFF)


class Relation(str, enum.Enum):
    SUBSET = "subset"
    EXCLUSION = "exclusion"


@dataclass(frozen=True)
class AtomicQuery:
    id: str
    text: str
    doc_ids: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True)
class QueryExpr:
    template: Template
    atoms: tuple

    def __post_init__(self):
        object.__setattr__(self, "template", Template(self.template))
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if len(self.atoms) != self.template.arity:
            raise ValueError(
                f"template {self.template.value} takes {self.template.arity} atoms, "
                f"got {len(self.atoms)}"
            )
        if len(set(self.atoms)) != len(self.atoms):
            raise ValueError(f"repeated atom in {self.atoms}")

    @property
    def negated_atom(self) -> str | None:
        """The atom whose documents are logically excluded, if any."""
        if self.template in NEGATION_TEMPLATES:
            return self.atoms[-1]
        return None

    def __str__(self) -> str:
        t = self.template
        a = self.atoms
        if t is Template.ATOM:
            return a[0]
        if t is Template.AND:
            return f"({a[0]} & {a[1]})"
        if t is Template.OR:
            return f"({a[0]} | {a[1]})"
        if t is Template.DIFF:
            return f"({a[0]} - {a[1]})"
        if t is Template.AND3:
            return f"({a[0]} & {a[1]} & {a[2]})"
        if t is Template.AND_DIFF:
            return f"({a[0]} & {a[1]} - {a[2]})"
        return f"({a[0]} | {a[1]} | {a[2]})"


@dataclass(frozen=True)
class RelationEdge:
    src: int
    dst: int
    kind: Relation


def _lookup(table: Mapping, key: str, what: str):
    try:
        return table[key]
    except KeyError:
        raise DatasetIntegrityError(f"unknown atom id {key!r} in {what}") from None


def eval_expr(expr: QueryExpr, membership: Mapping[str, bool]) -> bool:
    """Evaluate ``expr`` under a truth assignment to its atoms."""
    v = [bool(_lookup(membership, a, "truth assignment")) for a in expr.atoms]
    t = expr.template
    if t is Template.ATOM:
        return v[0]
    if t is Template.AND:
        return v[0] and v[1]
    if t is Template.OR:
        return v[0] or v[1]
    if t is Template.DIFF:
        return v[0] and not v[1]
    if t is Template.AND3:
        return v[0] and v[1] and v[2]
    if t is Template.AND_DIFF:
        return v[0] and v[1] and not v[2]
    return v[0] or v[1] or v[2]


def derive_ground_truth(expr: QueryExpr, atom_sets: Mapping[str, Iterable]) -> frozenset:
    """Apply the template's set operations to the atoms' document sets."""
    s = [frozenset(_lookup(atom_sets, a, "atom sets")) for a in expr.atoms]
    t = expr.template
    if t is Template.ATOM:
        return s[0]
    if t is Template.AND:
        return s[0] & s[1]
    if t is Template.OR:
        return s[0] | s[1]
    if t is Template.DIFF:
        return s[0] - s[1]
    if t is Template.AND3:
        return s[0] & s[1] & s[2]
    if t is Template.AND_DIFF:
        return (s[0] & s[1]) - s[2]
    return s[0] | s[1] | s[2]


def _assignments(atoms):
    for bits in itertools.product((False, True), repeat=len(atoms)):
        yield dict(zip(atoms, bits))


def implies(e1: QueryExpr, e2: QueryExpr) -> bool:
    atoms = sorted(set(e1.atoms) | set(e2.atoms))
    return all(
        eval_expr(e2, m) for m in _assignments(atoms) if eval_expr(e1, m)
    )


def jointly_unsatisfiable(e1: QueryExpr, e2: QueryExpr) -> bool:
    atoms = sorted(set(e1.atoms) | set(e2.atoms))
    return not any(eval_expr(e1, m) and eval_expr(e2, m) for m in _assignments(atoms))


@functools.lru_cache(maxsize=65536)
def derive_relation(e1: QueryExpr, e2: QueryExpr) -> Relation | None:
    """Relation of ``e1`` to ``e2``: SUBSET if e1 implies e2, EXCLUSION if
    they cannot both hold, otherwise None.

    Subset is tested first, so an unsatisfiable ``e1`` reports SUBSET.
    Only the stated direction counts; ``e1`` being a superset gives None.
    """
    if not set(e1.atoms) & set(e2.atoms):
        # every template is satisfiable, so atom-disjoint expressions are independent
        return None
    if implies(e1, e2):
        return Relation.SUBSET
    if jointly_unsatisfiable(e1, e2):
        return Relation.EXCLUSION
    return None


def relation_edges(exprs: list[QueryExpr]) -> list[RelationEdge]:
    """All relation edges among a list of expressions, by list position.

    Exclusion edges are stored once with ``src < dst``. Equivalent
    expressions produce a Subset edge in both directions; only the
    ``src < dst`` one is kept.
    """
    edges = []
    n = len(exprs)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            rel = derive_relation(exprs[i], exprs[j])
            if rel is Relation.SUBSET:
                if i > j and derive_relation(exprs[j], exprs[i]) is Relation.SUBSET:
                    continue
                edges.append(RelationEdge(i, j, rel))
            elif rel is Relation.EXCLUSION and i < j:
                edges.append(RelationEdge(i, j, rel))
    return edges
