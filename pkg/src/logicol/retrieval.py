"""Exact dense retrieval and the evaluation metrics.

Rankings are full scans by cosine with ties broken by ascending document id,
so results do not depend on corpus order.
"""

from __future__ import annotations

import json
import math
import struct
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .encoder import EncoderModel
from .logic import NEGATION_TEMPLATES, Template

INDEX_MAGIC = b"LGCLINDX"
INDEX_VERSION = 1
DEFAULT_KS = (5, 20, 100, 1000)
CATEGORIES = ("None", "Intersection", "Negation", "Union")


class IndexVersionError(ValueError):
    pass


@dataclass
class CorpusIndex:
    doc_ids: list
    embeddings: np.ndarray
    model_version: str

    def __post_init__(self):
        # position of each row in ascending-id order, used as the tie key
        order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
        self._id_rank = np.empty(len(self.doc_ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.doc_ids))
        self.row_of = {d: i for i, d in enumerate(self.doc_ids)}

    def __len__(self):
        return len(self.doc_ids)


@dataclass
class Ranking:
    query_id: str
    doc_ids: list
    scores: np.ndarray


def build_index(model: EncoderModel, documents) -> CorpusIndex:
    ids = [d.id for d in documents]
    if not ids:
        return CorpusIndex([], np.zeros((0, model.dim)), model.version)
    E = model.encode([d.text for d in documents])
    return CorpusIndex(ids, E, model.version)


def save_index(index: CorpusIndex, path) -> None:
    header = {"format_version": INDEX_VERSION, "model_version": index.model_version,
              "doc_ids": index.doc_ids, "shape": list(index.embeddings.shape)}
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC + struct.pack("<I", len(blob)) + blob)
        fh.write(np.ascontiguousarray(index.embeddings, dtype="<f8").tobytes())


def load_index(path, model: EncoderModel | None = None) -> CorpusIndex:
    raw = Path(path).read_bytes()
    if raw[:8] != INDEX_MAGIC:
        raise IndexVersionError(f"{path}: not an index file")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n])
    if header["format_version"] != INDEX_VERSION:
        raise IndexVersionError(f"{path}: index format {header['format_version']} unsupported")
    if model is not None and header["model_version"] != model.version:
        raise IndexVersionError(
            f"{path}: index built for model {header['model_version']}, got {model.version}"
        )
    rows, cols = header["shape"]
    E = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=12 + n).reshape(rows, cols).copy()
    return CorpusIndex(header["doc_ids"], E, header["model_version"])


def rank(index: CorpusIndex, query: np.ndarray, k: int | None = None, query_id: str = "") -> Ranking:
    """Top-k documents by cosine, descending, ties by ascending doc id."""
    n = len(index)
    k = n if k is None else k
    if k > n:
        raise ValueError(f"k={k} exceeds corpus size {n}")
    scores = index.embeddings @ query
    order = np.lexsort((index._id_rank, -scores))[:k]
    return Ranking(query_id, [index.doc_ids[i] for i in order], scores[order])


def resolve_ks(ks, corpus_size: int) -> list:
    """Cutoffs for the recall columns; 1000 becomes ceil(corpus/3) on small corpora."""
    out = []
    for k in ks:
        if k == 1000 and corpus_size < 1000:
            k = max(1, math.ceil(corpus_size / 3))
        out.append(min(k, corpus_size))
    return sorted(set(out))


def precision_recall(ranked_ids, gt_docs, ks) -> dict | None:
    """P@1 and R@k for one ranking; None when the gold set is empty."""
    gt = set(gt_docs)
    if not gt:
        return None
    out = {"P@1": float(bool(ranked_ids) and ranked_ids[0] in gt)}
    for k in ks:
        out[f"R@{k}"] = len(gt.intersection(ranked_ids[:k])) / len(gt)
    return out


def violation_rate(rankings, gt_sets, excluded_sets) -> dict:
    """Fraction of queries whose excluded documents rank better on average
    than their gold documents. Ranks are 1-based over the full ordering.

    Queries with no excluded (or no gold) documents are skipped.
    """
    hits = eligible = skipped = 0
    for ranked_ids, gt, excluded in zip(rankings, gt_sets, excluded_sets):
        if not gt or not excluded:
            skipped += 1
            continue
        pos = {d: r for r, d in enumerate(ranked_ids, 1)}
        avg_pos = sum(pos[d] for d in gt) / len(gt)
        avg_neg = sum(pos[d] for d in excluded) / len(excluded)
        eligible += 1
        hits += avg_neg < avg_pos
    rate = hits / eligible if eligible else None
    return {"rate": rate, "violations": hits, "n_eligible": eligible, "n_skipped": skipped}


def mean_pairwise_cosine(E: np.ndarray) -> float | None:
    n = E.shape[0]
    if n < 2:
        return None
    U = E / np.linalg.norm(E, axis=1, keepdims=True)
    G = U @ U.T
    iu = np.triu_indices(n, 1)
    return float(G[iu].mean())


def avg_group_sim(model: EncoderModel, texts) -> float | None:
    """Mean pairwise cosine between the members' query embeddings."""
    return mean_pairwise_cosine(model.encode(list(texts)))


def pearson(x, y) -> float | None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return None
    return float(np.clip(xc @ yc / denom, -1.0, 1.0))


def similarity_correlation(index: CorpusIndex, y1: np.ndarray, y2: np.ndarray, k: int = 100) -> dict:
    """Pearson r of two queries' cosine scores over the union of their top-k
    documents, plus the size of the top-k overlap."""
    k = min(k, len(index))
    top1 = rank(index, y1, k).doc_ids
    top2 = rank(index, y2, k).doc_ids
    pool = sorted(set(top1) | set(top2))
    rows = [index.row_of[d] for d in pool]
    s1 = index.embeddings[rows] @ y1
    s2 = index.embeddings[rows] @ y2
    return {"pearson_r": pearson(s1, s2), "topk_overlap": len(set(top1) & set(top2)),
            "pool_size": len(pool), "k": k}


def and_not_pairs(dataset: Dataset, split: str = "test") -> list:
    """(intersection query, negation query) index pairs over the same atom pool."""
    by_pool = defaultdict(dict)
    for i, q in enumerate(dataset.queries):
        if q.split == split:
            by_pool[q.expr.atoms][q.template] = i
    pairs = []
    for templates in by_pool.values():
        for a, b in ((Template.AND, Template.DIFF), (Template.AND3, Template.AND_DIFF)):
            if a in templates and b in templates:
                pairs.append((templates[a], templates[b]))
    return sorted(pairs)


def _macro(rows: list) -> dict:
    if not rows:
        return {"n": 0}
    out = {"n": len(rows)}
    for key in rows[0]:
        out[key] = float(np.mean([r[key] for r in rows]))
    return out


def evaluate(model: EncoderModel, dataset: Dataset, split: str = "test", ks=DEFAULT_KS,
             corr_k: int = 100, index: CorpusIndex | None = None) -> dict:
    """Full metric suite over one split; returns a JSON-serializable report."""
    if index is None:
        index = build_index(model, dataset.documents)
    ks = resolve_ks(ks, len(index))
    qidx = dataset.split(split)
    Y = model.encode([dataset.queries[i].text for i in qidx])
    emb = dict(zip(qidx, Y))

    per_template = defaultdict(list)
    per_category = defaultdict(list)
    overall = []
    excluded_count = 0
    neg_rankings, neg_gt, neg_excl = [], [], []
    atom_sets = dataset.atom_sets
    for i in qidx:
        q = dataset.queries[i]
        ranking = rank(index, emb[i], query_id=q.id)
        m = precision_recall(ranking.doc_ids, q.gt_docs, ks)
        if m is None:
            excluded_count += 1
            continue
        per_template[q.template.value].append(m)
        per_category[q.template.category].append(m)
        overall.append(m)
        if q.template in NEGATION_TEMPLATES:
            neg_rankings.append(ranking.doc_ids)
            neg_gt.append(q.gt_docs)
            neg_excl.append(frozenset(atom_sets[q.expr.negated_atom]) - q.gt_docs)

    groups = {}
    split_set = set(qidx)
    for g in dataset.groups:
        if not any(m in split_set for m in g.members
                   if dataset.queries[m].template is not Template.ATOM):
            continue
        groups[g.id] = avg_group_sim(model, [dataset.queries[m].text for m in g.members])
    group_vals = [v for v in groups.values() if v is not None]

    correlations = []
    for a, b in and_not_pairs(dataset, split):
        rec = similarity_correlation(index, emb[a], emb[b], corr_k)
        rec.update(q1=dataset.queries[a].id, q2=dataset.queries[b].id,
                   template1=dataset.queries[a].template.value,
                   template2=dataset.queries[b].template.value)
        correlations.append(rec)
    rs = [c["pearson_r"] for c in correlations if c["pearson_r"] is not None]

    return {
        "split": split,
        "model_version": model.version,
        "corpus_size": len(index),
        "ks": ks,
        "overall": _macro(overall),
        "per_template": {t.value: _macro(per_template[t.value]) for t in Template
                         if per_template[t.value]},
        "per_category": {c: _macro(per_category[c]) for c in CATEGORIES if per_category[c]},
        "excluded_empty_gt": excluded_count,
        "violation": violation_rate(neg_rankings, neg_gt, neg_excl),
        "avg_group_sim": {"mean": float(np.mean(group_vals)) if group_vals else None,
                          "per_group": groups},
        "correlation": {
            "k": corr_k,
            "mean_pearson_r": float(np.mean(rs)) if rs else None,
            "mean_topk_overlap": (float(np.mean([c["topk_overlap"] for c in correlations]))
                                  if correlations else None),
            "undefined_r": len(correlations) - len(rs),
            "pairs": correlations,
        },
    }
