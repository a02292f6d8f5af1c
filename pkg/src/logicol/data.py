"""Synthetic entity-retrieval corpora with logically composed queries.

Entities belong to a domain ("films", "orchids", ...) and carry a handful of
categories of that domain. Each category is an atomic query whose ground truth
is the set of entities carrying it. Complex queries are composed from pools of
two or three atoms of the same domain through the seven fixed templates, and
their ground truth is derived with set operations.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .logic import (
    PAIR_TEMPLATES,
    TRIPLE_TEMPLATES,
    AtomicQuery,
    DatasetIntegrityError,
    QueryExpr,
    Template,
    derive_ground_truth,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")

DOCUMENTS_FILE = "documents.jsonl"
ATOMS_FILE = "atoms.jsonl"
QUERIES_FILE = "queries.jsonl"
BASELINE_QUERIES_FILE = "baseline_queries.jsonl"

# (domain, category prefix, document field label); the atom text is
# "<prefix> <value>" and documents list their values after the label, so a
# document shares only the value word (not the prefix bigrams) with a query.
DOMAINS = (
    ("films", "films set in", "settings"),
    ("orchids", "orchids of", "native range"),
    ("novels", "novels about", "subjects"),
    ("birds", "birds found in", "range"),
    ("albums", "albums recorded in", "studios"),
    ("beetles", "beetles of", "distribution"),
    ("paintings", "paintings of", "depicts"),
    ("operas", "operas set in", "locations"),
)

# Surface forms per connective. {a} is the first atom's full text; {b} and {c}
# are the remaining atoms with the shared prefix removed, so that the connective
# sits right before the distinguishing word ("... but not tunisia").
SURFACE_FORMS = {
    Template.AND: ("{a} and {b}", "{a} that are also {b}"),
    Template.OR: ("{a} or {b}", "{a} or else {b}"),
    Template.DIFF: ("{a} but not {b}", "{a} that are not {b}"),
    Template.AND3: ("{a} and {b} and {c}", "{a}, {b} and {c}"),
    Template.AND_DIFF: ("{a} and {b} but not {c}", "{a} and {b} that are not {c}"),
    Template.OR3: ("{a} or {b} or {c}", "{a}, {b} or {c}"),
}

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "gr", "kr", "tr", "st", "sh", "th")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ea", "ou")
_CODAS = ("", "", "n", "r", "s", "l", "th", "nd")


class DatasetFormatError(ValueError):
    """A dataset file line could not be parsed."""


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str


@dataclass(frozen=True)
class QueryRecord:
    id: str
    expr: QueryExpr
    text: str
    gt_docs: frozenset
    split: str = "train"

    @property
    def template(self) -> Template:
        return self.expr.template


@dataclass(frozen=True)
class QueryGroup:
    id: str
    atom_ids: tuple
    members: tuple


@dataclass
class SynthConfig:
    n_entities: int = 2000
    n_atoms: int = 60
    n_domains: int = 4
    mean_categories: float = 3.0
    popularity_exponent: float = 0.5
    n_pair_pools: int = 130
    n_triple_pools: int = 50
    split_fractions: tuple = (0.6, 0.1, 0.3)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        cfg = cls(**known)
        cfg.split_fractions = tuple(cfg.split_fractions)
        return cfg


@dataclass
class Corpus:
    documents: list
    atoms: dict
    families: dict  # domain -> list of retained atom ids
    report: dict = field(default_factory=dict)


@dataclass
class Dataset:
    documents: list
    atoms: dict
    queries: list
    integrity_warnings: int = 0

    def __post_init__(self):
        self._groups = None
        self.doc_index = {d.id: i for i, d in enumerate(self.documents)}

    @property
    def atom_sets(self) -> dict:
        return {a.id: a.doc_ids for a in self.atoms.values()}

    @property
    def groups(self) -> list:
        if self._groups is None:
            self._groups = build_groups(self.queries)
        return self._groups

    def split(self, name: str) -> list:
        """Indices of the queries in one split."""
        return [i for i, q in enumerate(self.queries) if q.split == name]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.documents == other.documents and self.atoms == other.atoms
                and self.queries == other.queries)


def _pseudo_word(rng: np.random.Generator, n_syllables: int) -> str:
    parts = []
    for _ in range(n_syllables):
        parts.append(_ONSETS[rng.integers(len(_ONSETS))])
        parts.append(_VOWELS[rng.integers(len(_VOWELS))])
    parts.append(_CODAS[rng.integers(len(_CODAS))])
    return "".join(parts)


def _unique_words(rng, n, taken, n_syllables=(2, 3)):
    words = []
    while len(words) < n:
        w = _pseudo_word(rng, int(rng.integers(n_syllables[0], n_syllables[1] + 1)))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def synthesize_corpus(config: SynthConfig) -> Corpus:
    """Generate documents and atomic queries.

    Atoms whose document set comes out empty are discarded; the count is
    kept under ``report["discarded_atoms"]``.
    """
    if config.n_atoms < 3:
        raise ValueError("n_atoms must be at least 3")
    n_domains = min(config.n_domains, len(DOMAINS), config.n_atoms)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))

    taken: set = set()
    values = _unique_words(rng, config.n_atoms, taken)
    titles = _unique_words(rng, config.n_entities, taken)

    per_domain = [config.n_atoms // n_domains + (k < config.n_atoms % n_domains)
                  for k in range(n_domains)]
    atom_ids, atom_text, atom_value, atom_domain = [], {}, {}, {}
    v = 0
    for k in range(n_domains):
        domain, prefix, _ = DOMAINS[k]
        for _ in range(per_domain[k]):
            aid = f"a{len(atom_ids):03d}"
            atom_ids.append(aid)
            atom_text[aid] = f"{prefix} {values[v]}"
            atom_value[aid] = values[v]
            atom_domain[aid] = domain
            v += 1
    domain_atoms = {
        DOMAINS[k][0]: [a for a in atom_ids if atom_domain[a] == DOMAINS[k][0]]
        for k in range(n_domains)
    }

    members = {a: [] for a in atom_ids}
    documents = []
    width = max(5, len(str(config.n_entities)))
    for e in range(config.n_entities):
        domain, _, label = DOMAINS[int(rng.integers(n_domains))]
        pool = domain_atoms[domain]
        weights = 1.0 / np.arange(1, len(pool) + 1) ** config.popularity_exponent
        weights = weights / weights.sum()
        k = 1 + int(rng.poisson(max(config.mean_categories - 1.0, 0.0)))
        k = min(k, len(pool))
        picked = sorted(rng.choice(len(pool), size=k, replace=False, p=weights))
        cats = [pool[i] for i in picked]
        did = f"d{e:0{width}d}"
        title = titles[e].capitalize()
        # a fixed separator keeps value bigrams value-specific, not pair-specific
        text = (f"{title} is one of the {domain}. {label.capitalize()}: "
                + " also ".join(atom_value[a] for a in cats) + ".")
        documents.append(Document(did, title, text))
        for a in cats:
            members[a].append(did)

    atoms = {}
    discarded = 0
    for a in atom_ids:
        if not members[a]:
            discarded += 1
            continue
        atoms[a] = AtomicQuery(a, atom_text[a], frozenset(members[a]))
    if discarded:
        log.warning("discarded %d atoms with no documents", discarded)
    families = {d: [a for a in ids if a in atoms] for d, ids in domain_atoms.items()}
    report = {
        "n_documents": len(documents),
        "n_atoms_requested": config.n_atoms,
        "n_atoms_retained": len(atoms),
        "discarded_atoms": discarded,
    }
    return Corpus(documents, atoms, families, report)


def _shared_prefix_len(a: list, b: list) -> int:
    n = 0
    while n < min(len(a), len(b)) - 1 and a[n] == b[n]:
        n += 1
    return n


def render_text(template: Template, texts: Sequence[str], form: int = 0) -> str:
    """Render a templated query from the atoms' texts."""
    if template is Template.ATOM:
        return texts[0]
    words = [t.split() for t in texts]
    rest = []
    for w in words[1:]:
        n = _shared_prefix_len(words[0], w)
        rest.append(" ".join(w[n:]))
    fmt = SURFACE_FORMS[template][form % len(SURFACE_FORMS[template])]
    keys = dict(zip("bc", rest))
    return fmt.format(a=texts[0], **keys)


def compose_variants(
    pool: Sequence[str],
    atoms: dict,
    templates: Iterable[Template] | None = None,
    rng: np.random.Generator | None = None,
) -> list:
    """Queries over one atom pool: the atoms themselves plus every template of
    matching arity. Variants with an empty ground truth are dropped.

    Records come back with an empty id and split "train"; callers assign both.
    """
    pool = tuple(pool)
    if len(pool) not in (2, 3):
        raise ValueError("atom pools have two or three atoms")
    if templates is None:
        templates = (Template.ATOM,) + (PAIR_TEMPLATES if len(pool) == 2 else TRIPLE_TEMPLATES)
    templates = [Template(t) for t in templates]
    atom_sets = {a: atoms[a].doc_ids for a in pool}
    out = []
    if Template.ATOM in templates:
        for a in pool:
            out.append(QueryRecord("", QueryExpr(Template.ATOM, (a,)), atoms[a].text,
                                   frozenset(atoms[a].doc_ids)))
    for t in templates:
        if t is Template.ATOM or t.arity != len(pool):
            continue
        expr = QueryExpr(t, pool)
        gt = derive_ground_truth(expr, atom_sets)
        if not gt:
            continue
        form = 0 if rng is None else int(rng.integers(len(SURFACE_FORMS[t])))
        text = render_text(t, [atoms[a].text for a in pool], form)
        out.append(QueryRecord("", expr, text, gt))
    return out


def build_groups(queries: Sequence[QueryRecord]) -> list:
    """One group per distinct atom pool of the multi-atom queries.

    Members are the pool's complex queries followed by its single-atom
    queries. Atoms without any complex query form no group.
    """
    atom_query = {}
    for i, q in enumerate(queries):
        if q.template is Template.ATOM:
            atom_query.setdefault(q.expr.atoms[0], i)
    pools: dict = {}
    for i, q in enumerate(queries):
        if q.template is Template.ATOM:
            continue
        pools.setdefault(frozenset(q.expr.atoms), []).append(i)
    groups = []
    for pool_atoms, complex_members in pools.items():
        ordered = queries[complex_members[0]].expr.atoms
        atom_members = [atom_query[a] for a in ordered if a in atom_query]
        members = tuple(complex_members + atom_members)
        if len(members) < 2:
            continue
        groups.append(QueryGroup(f"g{len(groups):04d}", tuple(ordered), members))
    return groups


def _sample_pools(rng, families, n, size, taken):
    eligible = [f for f in families.values() if len(f) >= size]
    pools = []
    attempts = 0
    while len(pools) < n and eligible and attempts < 50 * max(n, 1):
        attempts += 1
        fam = eligible[int(rng.integers(len(eligible)))]
        idx = rng.choice(len(fam), size=size, replace=False)
        pool = tuple(fam[i] for i in idx)
        key = frozenset(pool)
        if key in taken:
            continue
        taken.add(key)
        pools.append(pool)
    return pools


def synthesize_dataset(config: SynthConfig) -> tuple:
    """Full pipeline: corpus, atom pools, variants, splits.

    Returns ``(variants, baseline, report)``. ``variants`` holds every composed
    query; ``baseline`` keeps the atoms plus one randomly chosen complex query
    per training pool (evaluation splits are shared), mimicking a dataset where
    few queries share atoms.
    """
    corpus = synthesize_corpus(config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    taken: set = set()
    pools = _sample_pools(rng, corpus.families, config.n_pair_pools, 2, taken)
    pools += _sample_pools(rng, corpus.families, config.n_triple_pools, 3, taken)

    fr = np.asarray(config.split_fractions, dtype=float)
    fr = fr / fr.sum()
    order = rng.permutation(len(pools))
    cuts = np.floor(np.cumsum(fr) * len(pools) + 1e-9).astype(int)
    pool_split = {}
    for rank, p in enumerate(order):
        pool_split[int(p)] = SPLITS[int(np.searchsorted(cuts, rank, side="right"))]

    queries = [
        QueryRecord("", QueryExpr(Template.ATOM, (a,)), atom.text, atom.doc_ids, "train")
        for a, atom in corpus.atoms.items()
    ]
    by_pool = []
    for p, pool in enumerate(pools):
        recs = [r for r in compose_variants(pool, corpus.atoms, rng=rng)
                if r.template is not Template.ATOM]
        start = len(queries)
        for r in recs:
            queries.append(QueryRecord("", r.expr, r.text, r.gt_docs, pool_split[p]))
        by_pool.append(list(range(start, len(queries))))
    queries = [QueryRecord(f"q{i:05d}", q.expr, q.text, q.gt_docs, q.split)
               for i, q in enumerate(queries)]

    keep = set(range(len(corpus.atoms)))
    for p, idx in enumerate(by_pool):
        if not idx:
            continue
        if pool_split[p] == "train":
            keep.add(idx[int(rng.integers(len(idx)))])
        else:
            keep.update(idx)
    baseline_queries = [q for i, q in enumerate(queries) if i in keep]

    variants = Dataset(corpus.documents, corpus.atoms, queries)
    baseline = Dataset(corpus.documents, corpus.atoms, baseline_queries)
    report = dict(corpus.report)
    report["n_pools"] = len(pools)
    report["variants"] = dataset_stats(variants)
    report["baseline"] = dataset_stats(baseline)
    report["co_occurring_and_nonempty"] = and_pair_nonempty_rate(corpus)
    return variants, baseline, report


def and_pair_nonempty_rate(corpus: Corpus) -> float:
    """Fraction of same-domain atom pairs whose intersection is non-empty."""
    hits = total = 0
    for ids in corpus.families.values():
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                total += 1
                hits += bool(corpus.atoms[ids[i]].doc_ids & corpus.atoms[ids[j]].doc_ids)
    return hits / total if total else math.nan


def dataset_stats(ds: Dataset) -> dict:
    """Query counts per template and split."""
    counts = Counter((q.template.value, q.split) for q in ds.queries)
    table = {}
    for t in Template:
        table[t.value] = {s: counts.get((t.value, s), 0) for s in SPLITS}
    table["Total"] = {s: sum(table[t.value][s] for t in Template) for s in SPLITS}
    return table


# --------------------------------------------------------------------------
# JSONL persistence


def _dump_jsonl(path: Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def save_dataset(ds: Dataset, path, queries_file: str = QUERIES_FILE) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _dump_jsonl(path / DOCUMENTS_FILE,
                ({"id": d.id, "title": d.title, "text": d.text} for d in ds.documents))
    _dump_jsonl(path / ATOMS_FILE,
                ({"id": a.id, "text": a.text, "doc_ids": sorted(a.doc_ids)}
                 for a in ds.atoms.values()))
    _dump_jsonl(path / queries_file, (
        {
            "id": q.id,
            "template": q.template.value,
            "atoms": list(q.expr.atoms),
            "text": q.text,
            "gt_docs": sorted(q.gt_docs),
            "split": q.split,
        }
        for q in ds.queries
    ))


def _read_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path.name}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict):
                raise DatasetFormatError(f"{path.name}:{lineno}: expected an object")
            yield lineno, row


def _field(row, name, kind, where):
    if name not in row:
        raise DatasetFormatError(f"{where}: missing field {name!r}")
    value = row[name]
    if kind is list:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise DatasetFormatError(f"{where}: field {name!r} must be a list of strings")
    elif not isinstance(value, kind):
        raise DatasetFormatError(f"{where}: field {name!r} must be {kind.__name__}")
    return value


def load_dataset(path, queries_file: str = QUERIES_FILE) -> Dataset:
    """Load a dataset directory and re-derive every query's ground truth.

    Records whose stored ``gt_docs`` disagree with the derivation are kept
    as stored and counted in ``integrity_warnings``.
    """
    path = Path(path)
    documents = []
    for lineno, row in _read_jsonl(path / DOCUMENTS_FILE):
        where = f"{DOCUMENTS_FILE}:{lineno}"
        documents.append(Document(_field(row, "id", str, where), _field(row, "title", str, where),
                                  _field(row, "text", str, where)))
    atoms = {}
    for lineno, row in _read_jsonl(path / ATOMS_FILE):
        where = f"{ATOMS_FILE}:{lineno}"
        aid = _field(row, "id", str, where)
        atoms[aid] = AtomicQuery(aid, _field(row, "text", str, where),
                                 frozenset(_field(row, "doc_ids", list, where)))
    atom_sets = {a.id: a.doc_ids for a in atoms.values()}
    queries = []
    warnings = 0
    for lineno, row in _read_jsonl(path / queries_file):
        where = f"{queries_file}:{lineno}"
        template = _field(row, "template", str, where)
        try:
            template = Template(template)
        except ValueError:
            raise DatasetFormatError(f"{where}: field 'template' has unknown value {template!r}") from None
        try:
            expr = QueryExpr(template, _field(row, "atoms", list, where))
        except ValueError as exc:
            raise DatasetFormatError(f"{where}: field 'atoms': {exc}") from None
        split = _field(row, "split", str, where)
        if split not in SPLITS:
            raise DatasetFormatError(f"{where}: field 'split' has unknown value {split!r}")
        gt = frozenset(_field(row, "gt_docs", list, where))
        try:
            derived = derive_ground_truth(expr, atom_sets)
        except DatasetIntegrityError as exc:
            raise DatasetIntegrityError(f"{where}: {exc}") from None
        if derived != gt:
            warnings += 1
            log.warning("%s: gt_docs disagree with derived ground truth", where)
        queries.append(QueryRecord(_field(row, "id", str, where), expr,
                                   _field(row, "text", str, where), gt, split))
    return Dataset(documents, atoms, queries, integrity_warnings=warnings)
