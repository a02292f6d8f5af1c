from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logicol.logic import (DatasetIntegrityError, QueryExpr, Relation, RelationEdge, Template,
                           derive_ground_truth, derive_relation, eval_expr, relation_edges)

A, B, C = "A", "B", "C"


class TestQueryExpr:
    @pytest.mark.parametrize("template,atoms", [
        (Template.ATOM, (A, B)),
        (Template.AND, (A,)),
        (Template.AND3, (A, B)),
    ])
    def test_arity_mismatch(self, template, atoms):
        with pytest.raises(ValueError, match="takes"):
            QueryExpr(template, atoms)

    def test_repeated_atom_rejected(self):
        with pytest.raises(ValueError, match="repeated"):
            QueryExpr(Template.AND, (A, A))

    def test_string_template_coerced(self):
        assert QueryExpr("A-B", [A, B]).template is Template.DIFF

    @pytest.mark.parametrize("template,negated", [
        (Template.DIFF, B), (Template.AND_DIFF, C), (Template.AND, None), (Template.OR3, None),
    ])
    def test_negated_atom(self, template, negated):
        atoms = (A, B, C)[:template.arity]
        assert QueryExpr(template, atoms).negated_atom == negated

    def test_categories(self):
        assert {t.category for t in Template} == {"None", "Intersection", "Negation", "Union"}
        assert Template.AND_DIFF.category == "Negation"


class TestEvalAndGroundTruth:
    def test_eval_truth_table_diff(self):
        e = QueryExpr(Template.DIFF, (A, B))
        table = {(a, b): eval_expr(e, {A: a, B: b}) for a, b in itertools.product((0, 1), repeat=2)}
        assert table == {(0, 0): False, (0, 1): False, (1, 0): True, (1, 1): False}

    def test_ground_truth_sets(self):
        sets = {A: {1, 2, 3}, B: {2, 3, 4}, C: {3, 5}}
        assert derive_ground_truth(QueryExpr(Template.AND, (A, B)), sets) == {2, 3}
        assert derive_ground_truth(QueryExpr(Template.OR, (A, B)), sets) == {1, 2, 3, 4}
        assert derive_ground_truth(QueryExpr(Template.DIFF, (A, B)), sets) == {1}
        assert derive_ground_truth(QueryExpr(Template.AND_DIFF, (A, B, C)), sets) == {2}
        assert derive_ground_truth(QueryExpr(Template.OR3, (A, B, C)), sets) == {1, 2, 3, 4, 5}

    def test_unknown_atom(self):
        with pytest.raises(DatasetIntegrityError, match="Z"):
            derive_ground_truth(QueryExpr(Template.AND, (A, "Z")), {A: {1}})

    @settings(max_examples=200, deadline=None)
    @given(st.sampled_from(list(Template)),
           st.lists(st.frozensets(st.integers(0, 12), max_size=8), min_size=3, max_size=3))
    def test_ground_truth_matches_pointwise_eval(self, template, sets):
        atoms = (A, B, C)[:template.arity]
        atom_sets = dict(zip((A, B, C), sets))
        gt = derive_ground_truth(QueryExpr(template, atoms), atom_sets)
        universe = set().union(*sets)
        expected = {d for d in universe
                    if eval_expr(QueryExpr(template, atoms), {a: d in atom_sets[a] for a in (A, B, C)})}
        assert gt == expected


class TestDeriveRelation:
    @pytest.mark.parametrize("e1,e2,expected", [
        (QueryExpr(Template.AND, (A, B)), QueryExpr(Template.ATOM, (A,)), Relation.SUBSET),
        (QueryExpr(Template.ATOM, (A,)), QueryExpr(Template.AND, (A, B)), None),
        (QueryExpr(Template.DIFF, (A, B)), QueryExpr(Template.ATOM, (B,)), Relation.EXCLUSION),
        (QueryExpr(Template.AND, (A, B)), QueryExpr(Template.DIFF, (A, B)), Relation.EXCLUSION),
        (QueryExpr(Template.ATOM, (A,)), QueryExpr(Template.OR, (A, B)), Relation.SUBSET),
        (QueryExpr(Template.AND_DIFF, (A, B, C)), QueryExpr(Template.AND, (A, B)), Relation.SUBSET),
        (QueryExpr(Template.AND_DIFF, (A, B, C)), QueryExpr(Template.ATOM, (C,)), Relation.EXCLUSION),
        (QueryExpr(Template.AND3, (A, B, C)), QueryExpr(Template.AND_DIFF, (A, B, C)), Relation.EXCLUSION),
        (QueryExpr(Template.OR, (A, B)), QueryExpr(Template.OR, (B, A)), Relation.SUBSET),
        (QueryExpr(Template.ATOM, (A,)), QueryExpr(Template.ATOM, (B,)), None),
    ])
    def test_known_pairs(self, e1, e2, expected):
        assert derive_relation(e1, e2) is expected

    def test_exclusion_symmetric(self):
        exprs = [QueryExpr(t, c) for t in Template for c in itertools.permutations((A, B, C), t.arity)]
        for e1, e2 in itertools.product(exprs, repeat=2):
            r12, r21 = derive_relation(e1, e2), derive_relation(e2, e1)
            assert (r12 is Relation.EXCLUSION) == (r21 is Relation.EXCLUSION)


class TestRelationEdges:
    def test_group_edges(self):
        exprs = [QueryExpr(Template.ATOM, (A,)), QueryExpr(Template.ATOM, (B,)),
                 QueryExpr(Template.AND, (A, B)), QueryExpr(Template.DIFF, (A, B))]
        edges = set(relation_edges(exprs))
        assert edges == {
            RelationEdge(2, 0, Relation.SUBSET), RelationEdge(2, 1, Relation.SUBSET),
            RelationEdge(3, 0, Relation.SUBSET), RelationEdge(1, 3, Relation.EXCLUSION),
            RelationEdge(2, 3, Relation.EXCLUSION),
        }

    def test_equivalent_queries_keep_one_direction(self):
        exprs = [QueryExpr(Template.OR, (A, B)), QueryExpr(Template.OR, (B, A))]
        assert relation_edges(exprs) == [RelationEdge(0, 1, Relation.SUBSET)]

    def test_exclusion_stored_once(self):
        exprs = [QueryExpr(Template.DIFF, (A, B)), QueryExpr(Template.ATOM, (B,))]
        assert relation_edges(exprs) == [RelationEdge(0, 1, Relation.EXCLUSION)]
