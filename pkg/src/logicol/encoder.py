"""Hashed n-gram features, a linear embedder, and an Adam optimizer.

The encoder maps a text to ``normalize(W.T @ x)`` where ``x`` holds hashed
word unigram/bigram counts. Gradients are computed in closed form, including
the Jacobian of the L2 normalization.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"LGCLCKPT"
CHECKPOINT_VERSION = 1

_TOKEN = re.compile(r"[a-z0-9]+")


class CheckpointError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class HashConfig:
    n_features: int = 2 ** 15
    ngram_orders: tuple = (1, 2)
    seed: int = 0

    def __post_init__(self):
        f = self.n_features
        if f <= 0 or f & (f - 1):
            raise ValueError("n_features must be a power of two")
        object.__setattr__(self, "ngram_orders", tuple(self.ngram_orders))


@dataclass(frozen=True)
class FeatureVector:
    """Sparse bucket counts; ``indices`` sorted and unique, ``counts`` > 0."""

    indices: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        return (isinstance(other, FeatureVector)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.counts, other.counts))

    def scaled(self, factor: float) -> "FeatureVector":
        return FeatureVector(self.indices, self.counts * factor)


def tokenize(text: str) -> list:
    return _TOKEN.findall(text.lower())


def ngrams(tokens: list, orders=(1, 2)) -> list:
    out = []
    for n in orders:
        out.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return out


def _bucket(gram: str, config: HashConfig) -> int:
    h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8,
                        key=config.seed.to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little") & (config.n_features - 1)


def featurize(text: str, config: HashConfig = HashConfig()) -> FeatureVector:
    grams = ngrams(tokenize(text), config.ngram_orders)
    if not grams:
        return FeatureVector(np.zeros(0, dtype=np.int64), np.zeros(0))
    idx, counts = np.unique([_bucket(g, config) for g in grams], return_counts=True)
    return FeatureVector(idx.astype(np.int64), counts.astype(np.float64))


@dataclass
class EncoderModel:
    W: np.ndarray
    hash_config: HashConfig = field(default_factory=HashConfig)

    @classmethod
    def init(cls, dim: int = 64, hash_config: HashConfig = HashConfig(), seed: int = 0,
             scale: float = 0.1) -> "EncoderModel":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        W = rng.normal(0.0, scale, size=(hash_config.n_features, dim))
        return cls(W, hash_config)

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    @property
    def fallback(self) -> np.ndarray:
        """Unit vector returned for inputs whose projection vanishes."""
        return np.full(self.dim, 1.0 / np.sqrt(self.dim))

    @property
    def version(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(asdict(self.hash_config), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.W, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def featurize(self, text: str) -> FeatureVector:
        return featurize(text, self.hash_config)

    def encode(self, texts) -> np.ndarray:
        """Embed a list of texts, one unit row per text."""
        return embed_many(self, [self.featurize(t) for t in texts])[0]


def project(model: EncoderModel, x: FeatureVector) -> np.ndarray:
    if len(x) == 0:
        return np.zeros(model.dim)
    return x.counts @ model.W[x.indices]


def embed(model: EncoderModel, x: FeatureVector) -> np.ndarray:
    """Unit-norm embedding of one feature vector."""
    z = project(model, x)
    n = np.linalg.norm(z)
    if n == 0.0:
        return model.fallback
    return z / n


def embed_many(model: EncoderModel, xs: list) -> tuple:
    """Embeddings plus the pre-normalization norms (0 marks a fallback row)."""
    Y = np.empty((len(xs), model.dim))
    norms = np.empty(len(xs))
    for i, x in enumerate(xs):
        z = project(model, x)
        n = np.linalg.norm(z)
        norms[i] = n
        Y[i] = z / n if n > 0.0 else model.fallback
    return Y, norms


def backward_rows(model: EncoderModel, xs: list, Y: np.ndarray, norms: np.ndarray,
                  upstream: np.ndarray) -> tuple:
    """Row-sparse gradient: ``(rows, grad_rows)`` with ``rows`` sorted and unique.

    dL/dz = (I - y y^T) g / ||z||, and dL/dW[f] += x_f * dL/dz.
    Fallback rows (``norms == 0``) do not depend on ``W``.
    """
    idx, contrib = [], []
    for x, y, n, g in zip(xs, Y, norms, upstream):
        if n == 0.0 or len(x) == 0:
            continue
        gz = (g - y * (y @ g)) / n
        idx.append(x.indices)
        contrib.append(np.outer(x.counts, gz))
    if not idx:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.dim))
    idx = np.concatenate(idx)
    rows, inverse = np.unique(idx, return_inverse=True)
    grad_rows = np.zeros((len(rows), model.dim))
    np.add.at(grad_rows, inverse, np.vstack(contrib))
    return rows, grad_rows


def backward(model: EncoderModel, xs: list, Y: np.ndarray, norms: np.ndarray,
             upstream: np.ndarray) -> np.ndarray:
    """Dense gradient with respect to ``W`` given ``dL/dy`` per embedded item."""
    grad = np.zeros_like(model.W)
    rows, grad_rows = backward_rows(model, xs, Y, norms, upstream)
    grad[rows] = grad_rows
    return grad


@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    # rows that have ever received a gradient; all others have zero moments
    # and would receive an exactly-zero update
    live: np.ndarray | None = None


def optimizer_step(state: AdamState, model: EncoderModel, grad: np.ndarray,
                   rows: np.ndarray | None = None) -> None:
    """One Adam update of ``model.W`` in place.

    ``grad`` is either dense (shaped like ``W``) or, with ``rows``, the
    gradient of just those rows (every other row has zero gradient). Both
    forms give identical parameters. A gradient with NaN/inf entries leaves
    model and state untouched.
    """
    if not np.all(np.isfinite(grad)):
        bad = int(np.size(grad) - np.count_nonzero(np.isfinite(grad)))
        raise NonFiniteGradientError(f"gradient has {bad} non-finite entries; step skipped")
    if state.m is None:
        state.m = np.zeros_like(model.W)
        state.v = np.zeros_like(model.W)
        state.live = np.zeros(model.W.shape[0], dtype=bool)
    if rows is None:
        rows = np.flatnonzero(np.any(grad != 0, axis=1))
        grad = grad[rows]
    state.live[rows] = True
    live = np.flatnonzero(state.live)
    g = np.zeros((len(live), model.W.shape[1]))
    g[np.searchsorted(live, rows)] = grad
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m[live] + (1 - b1) * g
    v = b2 * state.v[live] + (1 - b2) * g * g
    state.m[live] = m
    state.v[live] = v
    step_size = state.lr / (1 - b1 ** state.step)
    denom = np.sqrt(v / (1 - b2 ** state.step)) + state.eps
    model.W[live] -= step_size * m / denom


def save_checkpoint(model: EncoderModel, path) -> None:
    """Binary container: magic, u32 header length, JSON header, row-major f8 W."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "hash_config": {"n_features": model.hash_config.n_features,
                        "ngram_orders": list(model.hash_config.ngram_orders),
                        "seed": model.hash_config.seed},
        "shape": list(model.W.shape),
        "model_version": model.version,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.W, dtype="<f8").tobytes())


def load_checkpoint(path) -> EncoderModel:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n])
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format {header.get('format_version')} != {CHECKPOINT_VERSION}"
        )
    rows, cols = header["shape"]
    hc = HashConfig(**header["hash_config"])
    if rows != hc.n_features:
        raise CheckpointError(f"{path}: W has {rows} rows but n_features={hc.n_features}")
    W = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=12 + n).reshape(rows, cols).copy()
    model = EncoderModel(W, hc)
    if model.version != header["model_version"]:
        raise CheckpointError(f"{path}: parameter checksum mismatch")
    return model
