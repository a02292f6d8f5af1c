"""Mini-batch construction: random, grouped, and mixed batching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .logic import Template, relation_edges


@dataclass
class MiniBatch:
    queries: list          # dataset query indices
    documents: list        # dataset document indices, no duplicates
    positives: list        # per query, array of positions into ``documents``
    edges: list            # RelationEdge over query positions

    def __post_init__(self):
        if len(set(self.documents)) != len(self.documents):
            raise ValueError("duplicate documents in batch")
        for i, pos in enumerate(self.positives):
            if len(pos) == 0:
                raise ValueError(f"query position {i} has no in-batch positive")


def batch_from_queries(dataset: Dataset, query_idx: list, rng: np.random.Generator) -> MiniBatch:
    """Sample one gold document per query, merge duplicates, and derive the
    positive sets and relation edges."""
    documents: list = []
    seen: dict = {}
    for qi in query_idx:
        gold = sorted(dataset.queries[qi].gt_docs)
        if not gold:
            raise ValueError(f"query {dataset.queries[qi].id} has empty ground truth")
        doc = dataset.doc_index[gold[int(rng.integers(len(gold)))]]
        if doc not in seen:
            seen[doc] = len(documents)
            documents.append(doc)
    doc_ids = [dataset.documents[d].id for d in documents]
    positives = []
    for qi in query_idx:
        gt = dataset.queries[qi].gt_docs
        positives.append(np.array([j for j, did in enumerate(doc_ids) if did in gt], dtype=int))
    edges = relation_edges([dataset.queries[qi].expr for qi in query_idx])
    return MiniBatch(list(query_idx), documents, positives, edges)


@dataclass
class BatchSampler:
    """Draws training batches from one split.

    ``strategy`` is "random", "grouped", or "mixed"; for "mixed",
    ceil(alpha * batch_size) slots are random and the rest are filled with
    whole groups (the last one truncated, atoms kept first). Queries and
    groups are each drawn without replacement until their pool is exhausted.
    """

    dataset: Dataset
    strategy: str = "mixed"
    batch_size: int = 16
    alpha: float = 0.5
    seed: int = 0
    split: str = "train"
    fallbacks: int = field(default=0, init=False)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.strategy not in ("random", "grouped", "mixed"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, 4]))
        self.pool = self.dataset.split(self.split)
        if not self.pool:
            raise ValueError(f"no queries in split {self.split!r}")
        in_split = set(self.pool)
        self.groups = []
        for g in self.dataset.groups:
            members = [m for m in g.members if m in in_split]
            complex_members = [m for m in members
                               if self.dataset.queries[m].template is not Template.ATOM]
            if complex_members and len(members) >= 2:
                atoms_first = [m for m in members if m not in complex_members]
                self.groups.append((atoms_first, complex_members))
        self._query_queue: list = []
        self._group_queue: list = []

    @property
    def n_random(self) -> int:
        if self.strategy == "random":
            return self.batch_size
        if self.strategy == "grouped":
            return 0
        return math.ceil(self.alpha * self.batch_size)

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.pool) / self.batch_size)

    def _next_query(self) -> int:
        if not self._query_queue:
            self._query_queue = [self.pool[i] for i in self.rng.permutation(len(self.pool))][::-1]
        return self._query_queue.pop()

    def _next_group(self):
        if not self._group_queue:
            self._group_queue = [self.groups[i] for i in self.rng.permutation(len(self.groups))][::-1]
        return self._group_queue.pop()

    def sample_query_indices(self) -> list:
        size = min(self.batch_size, len(self.pool))
        chosen: list = []
        taken: set = set()
        n_group_slots = size - min(self.n_random, size)
        if n_group_slots and not self.groups:
            self.fallbacks += n_group_slots
            n_group_slots = 0
        stale = 0
        while len(chosen) < n_group_slots and stale <= len(self.groups):
            atoms_first, complex_members = self._next_group()
            order = [complex_members[i] for i in self.rng.permutation(len(complex_members))]
            fresh = [m for m in atoms_first + order if m not in taken]
            if not fresh:
                stale += 1
                continue
            stale = 0
            room = n_group_slots - len(chosen)
            if len(fresh) > room:
                fresh = fresh[:room]
            chosen.extend(fresh)
            taken.update(fresh)
        if len(chosen) < n_group_slots:
            self.fallbacks += n_group_slots - len(chosen)
        guard = 0
        while len(chosen) < size and guard < 10 * len(self.pool) + size:
            guard += 1
            qi = self._next_query()
            if qi in taken:
                continue
            chosen.append(qi)
            taken.add(qi)
        return chosen

    def sample(self) -> MiniBatch:
        return batch_from_queries(self.dataset, self.sample_query_indices(), self.rng)


def sample_batch(dataset: Dataset, strategy: str, batch_size: int, rng_seed: int = 0,
                 alpha: float = 0.5) -> MiniBatch:
    """One batch from the training split; convenience over ``BatchSampler``."""
    return BatchSampler(dataset, strategy, batch_size, alpha, rng_seed).sample()
