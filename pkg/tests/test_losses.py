from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from logicol.logic import Relation, RelationEdge
from logicol.losses import (LossConfig, NonFiniteLossError, exclusion_loss, joint_loss,
                            similarity_distribution, subset_loss, subset_similarity, supcon_loss,
                            sym_kl)

EXCL = Relation.EXCLUSION
SUB = Relation.SUBSET


def unit(rng, n, d):
    X = rng.normal(size=(n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def numeric_grad(f, X, h=1e-6):
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        G[idx] = (f(Xp) - f(Xm)) / (2 * h)
    return G


class TestSupCon:
    def test_uniform_two_docs(self):
        Q = np.zeros((1, 2))
        D = np.zeros((2, 2))
        loss, _, _ = supcon_loss(Q, D, [[0]], tau=1.0)
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_positive_goes_to_zero(self):
        Q = np.array([[1.0, 0.0]])
        D = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert supcon_loss(Q, D, [[0]], tau=0.01)[0] < 1e-80

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        Q, D = unit(rng, 4, 5), unit(rng, 6, 5)
        pos = [[0], [1, 2], [3], [4, 5]]
        assert supcon_loss(Q, D, pos, 0.3)[0] == pytest.approx(
            oracles.supcon(Q.tolist(), D.tolist(), pos, 0.3), abs=1e-9)

    def test_empty_positive_set(self):
        with pytest.raises(ValueError, match="no positive"):
            supcon_loss(np.ones((1, 2)), np.ones((2, 2)), [[]], 0.1)

    def test_decreases_when_positive_moves_closer(self):
        rng = np.random.default_rng(1)
        Q, D = unit(rng, 1, 4), unit(rng, 3, 4)
        base = supcon_loss(Q, D, [[0]], 0.2)[0]
        D2 = D.copy()
        D2[0] += 0.1 * Q[0]
        assert supcon_loss(Q, D2, [[0]], 0.2)[0] < base

    def test_gradient(self):
        rng = np.random.default_rng(2)
        Q, D = unit(rng, 3, 4), unit(rng, 5, 4)
        pos = [[0, 1], [2], [3, 4]]
        _, dQ, dD = supcon_loss(Q, D, pos, 0.5)
        assert np.allclose(dQ, numeric_grad(lambda X: supcon_loss(X, D, pos, 0.5)[0], Q), atol=1e-7)
        assert np.allclose(dD, numeric_grad(lambda X: supcon_loss(Q, X, pos, 0.5)[0], D), atol=1e-7)


class TestSimilarityDistribution:
    def test_uniform(self):
        p = similarity_distribution(np.ones(3), np.ones((4, 3)), 0.05)
        assert np.allclose(p, 0.25)

    def test_two_docs(self):
        # cosines (0.8, 0.2) with tau 1
        q = np.array([1.0, 0.0])
        D = np.array([[0.8, 0.6], [0.2, math.sqrt(1 - 0.04)]])
        p = similarity_distribution(q, D, 1.0)
        s = 1 / (1 + math.exp(-0.6))
        assert np.allclose(p, [s, 1 - s], atol=1e-12)
        assert p == pytest.approx([0.6457, 0.3543], abs=1e-4)

    def test_needs_two_docs(self):
        with pytest.raises(ValueError):
            similarity_distribution(np.ones(2), np.ones((1, 2)), 1.0)


class TestSymKL:
    def test_equal(self):
        assert sym_kl([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_hand_value(self):
        assert sym_kl([0.75, 0.25], [0.25, 0.75]) == pytest.approx(0.5 * math.log(3), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            sym_kl([0.5, 0.5], [1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 10 ** 6))
    def test_symmetric_nonnegative(self, n, seed):
        rng = np.random.default_rng(seed)
        p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        assert sym_kl(p, q) >= 0
        assert sym_kl(p, q) == pytest.approx(sym_kl(q, p), abs=1e-12)
        assert sym_kl(p, q) == pytest.approx(oracles.sym_kl(p.tolist(), q.tolist()), abs=1e-12)


class TestExclusion:
    def test_identical_queries_give_margin(self):
        rng = np.random.default_rng(0)
        q = unit(rng, 1, 4)
        Q = np.vstack([q, q])
        D = unit(rng, 5, 4)
        loss, _, _ = exclusion_loss(Q, D, [RelationEdge(0, 1, EXCL)], 0.2, 0.05)
        assert loss == pytest.approx(0.2, abs=1e-12)

    def test_hinge_inactive_beyond_margin(self):
        # two documents, distributions (0.75, 0.25) and (0.25, 0.75): SymKL 0.5493 > 0.2
        tau = 1.0
        z = math.log(3) / 2
        D = np.array([[1.0, 0.0], [-1.0, 0.0]])
        Q = np.array([[z, 0.0], [-z, 0.0]])
        assert similarity_distribution(Q[0], D, tau) == pytest.approx([0.75, 0.25])
        loss, dQ, dD = exclusion_loss(Q, D, [RelationEdge(0, 1, EXCL)], 0.2, tau)
        assert loss == 0.0 and not dQ.any() and not dD.any()

    def test_ignores_subset_edges(self):
        rng = np.random.default_rng(0)
        Q, D = unit(rng, 2, 3), unit(rng, 3, 3)
        assert exclusion_loss(Q, D, [RelationEdge(0, 1, SUB)], 0.2, 0.1)[0] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_bounded_by_margin(self, seed):
        rng = np.random.default_rng(seed)
        Q, D = unit(rng, 3, 4), unit(rng, 4, 4)
        edges = [RelationEdge(0, 1, EXCL), RelationEdge(1, 2, EXCL)]
        loss = exclusion_loss(Q, D, edges, 0.7, 0.3)[0]
        assert 0.0 <= loss <= 0.7

    def test_gradient(self):
        rng = np.random.default_rng(3)
        Q, D = unit(rng, 3, 4), unit(rng, 5, 4)
        edges = [RelationEdge(0, 1, EXCL), RelationEdge(0, 2, EXCL)]

        def f(Qx, Dx):
            return exclusion_loss(Qx, Dx, edges, 5.0, 0.5)

        _, dQ, dD = f(Q, D)
        assert np.allclose(dQ, numeric_grad(lambda X: f(X, D)[0], Q), atol=1e-7)
        assert np.allclose(dD, numeric_grad(lambda X: f(Q, X)[0], D), atol=1e-7)


class TestSubset:
    def _pair(self, c1, c2):
        # one document e1; cosines c1 (query 0) and c2 (query 1)
        Q = np.array([[c1, math.sqrt(1 - c1 ** 2)], [c2, math.sqrt(1 - c2 ** 2)]])
        return Q, np.array([[1.0, 0.0]])

    def test_equal_similarity_gives_margin_per_doc(self):
        rng = np.random.default_rng(0)
        q = unit(rng, 1, 3)
        D = unit(rng, 7, 3)
        loss = subset_loss(np.vstack([q, q]), D, [RelationEdge(0, 1, SUB)], 0.2)[0]
        assert loss == pytest.approx(7 * 0.2, abs=1e-12)

    @pytest.mark.parametrize("s1,s2,expected", [
        (0.5, 0.8, 0.0),
        (0.9, 0.3, math.log(3) + 0.2),
    ])
    def test_hand_values(self, s1, s2, expected):
        Q, D = self._pair(2 * s1 - 1, 2 * s2 - 1)
        loss = subset_loss(Q, D, [RelationEdge(0, 1, SUB)], 0.2)[0]
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_mean_reduction(self):
        rng = np.random.default_rng(1)
        Q, D = unit(rng, 3, 4), unit(rng, 5, 4)
        edges = [RelationEdge(0, 1, SUB), RelationEdge(2, 1, SUB)]
        total = subset_loss(Q, D, edges, 0.2)[0]
        assert subset_loss(Q, D, edges, 0.2, reduction="mean")[0] == pytest.approx(total / 10)

    def test_similarity_clamped(self):
        assert subset_similarity(-1.0) == 1e-8
        assert subset_similarity(1.0) == 1.0

    def test_term_bounded(self):
        Q = np.array([[1.0, 0.0], [-1.0, 0.0]])
        D = np.array([[1.0, 0.0]])
        loss = subset_loss(Q, D, [RelationEdge(0, 1, SUB)], 0.2)[0]
        assert loss == pytest.approx(math.log(1e8) + 0.2)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        Q, D = unit(rng, 3, 4), unit(rng, 5, 4)
        edges = [RelationEdge(0, 1, SUB), RelationEdge(2, 0, SUB)]
        _, dQ, dD = subset_loss(Q, D, edges, 0.3)
        assert np.allclose(dQ, numeric_grad(lambda X: subset_loss(X, D, edges, 0.3)[0], Q), atol=1e-6)
        assert np.allclose(dD, numeric_grad(lambda X: subset_loss(Q, X, edges, 0.3)[0], D), atol=1e-6)


class TestJoint:
    def _batch(self, seed=0):
        rng = np.random.default_rng(seed)
        Q, D = unit(rng, 4, 5), unit(rng, 6, 5)
        pos = [[0], [1, 2], [3], [4, 5]]
        edges = [RelationEdge(0, 1, SUB), RelationEdge(1, 2, EXCL), RelationEdge(3, 0, SUB)]
        return Q, D, pos, edges

    def test_reduces_to_supcon(self):
        Q, D, pos, edges = self._batch()
        cfg = LossConfig(lambda_e=0.0, lambda_s=0.0)
        parts, dQ, dD = joint_loss(Q, D, pos, edges, cfg)
        sc, sq, sd = supcon_loss(Q, D, pos, cfg.tau)
        assert parts["joint"] == sc and np.array_equal(dQ, sq) and np.array_equal(dD, sd)

    def test_no_edges(self):
        Q, D, pos, _ = self._batch()
        parts, _, _ = joint_loss(Q, D, pos, [], LossConfig())
        assert parts["exclusion"] == 0.0 and parts["subset"] == 0.0
        assert parts["joint"] == parts["supcon"]

    @pytest.mark.parametrize("seed", range(5))
    def test_weighted_sum(self, seed):
        Q, D, pos, edges = self._batch(seed)
        cfg = LossConfig(lambda_e=0.3, lambda_s=0.7, gamma_e=2.0)
        parts, _, _ = joint_loss(Q, D, pos, edges, cfg)
        ex = [(e.src, e.dst) for e in edges if e.kind is EXCL]
        sb = [(e.src, e.dst) for e in edges if e.kind is SUB]
        ref = (oracles.supcon(Q.tolist(), D.tolist(), pos, cfg.tau)
               + 0.3 * oracles.exclusion(Q.tolist(), D.tolist(), ex, 2.0, cfg.tau)
               + 0.7 * oracles.subset(Q.tolist(), D.tolist(), sb, cfg.gamma_s))
        assert parts["joint"] == pytest.approx(ref, abs=1e-9)

    def test_permuting_documents(self):
        Q, D, pos, edges = self._batch()
        perm = np.array([3, 0, 5, 1, 4, 2])
        inv = np.argsort(perm)
        pos2 = [[int(inv[p]) for p in ps] for ps in pos]
        a, _, _ = joint_loss(Q, D, pos, edges, LossConfig())
        b, _, _ = joint_loss(Q, D[perm], pos2, edges, LossConfig())
        for k in a:
            assert a[k] == pytest.approx(b[k], abs=1e-12)

    def test_non_finite_names_component(self):
        Q, D, pos, edges = self._batch()
        Q = Q.copy()
        Q[0, 0] = np.nan
        with pytest.raises(NonFiniteLossError, match="supcon"):
            joint_loss(Q, D, pos, edges, LossConfig())


class TestLossConfig:
    @pytest.mark.parametrize("kwargs", [
        {"tau": 0.0}, {"gamma_e": -1.0}, {"gamma_s": float("inf")}, {"lambda_e": -0.1},
        {"eps": 0.0}, {"dist_tau": 0.0}, {"subset_reduction": "max"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)

    def test_exclusion_tau_override(self):
        assert LossConfig(tau=0.05).exclusion_tau == 0.05
        assert LossConfig(tau=0.05, dist_tau=1.0).exclusion_tau == 1.0
