"""Training objectives over a mini-batch of unit embeddings.

All functions take query embeddings ``Q`` (n_q x d) and document embeddings
``D`` (n_d x d) and return the loss value together with ``dL/dQ`` and
``dL/dD``. Gradients are exact; hinge kinks and clamp boundaries take the
zero subgradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .logic import Relation


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class LossConfig:
    tau: float = 0.05
    gamma_e: float = 0.2
    gamma_s: float = 0.2
    lambda_e: float = 0.1
    lambda_s: float = 0.1
    eps: float = 1e-8
    # temperature of the exclusion softmax; None reuses ``tau``
    dist_tau: float | None = None
    subset_reduction: str = "sum"

    def __post_init__(self):
        if self.tau <= 0 or (self.dist_tau is not None and self.dist_tau <= 0):
            raise ValueError("temperatures must be positive")
        if self.gamma_e <= 0 or self.gamma_s <= 0 or not (
                math.isfinite(self.gamma_e) and math.isfinite(self.gamma_s)):
            raise ValueError("margins must be positive and finite")
        if self.lambda_e < 0 or self.lambda_s < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.subset_reduction not in ("sum", "mean"):
            raise ValueError("subset_reduction is 'sum' or 'mean'")

    @property
    def exclusion_tau(self) -> float:
        return self.tau if self.dist_tau is None else self.dist_tau


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(logits: np.ndarray) -> float:
    m = logits.max()
    return m + math.log(np.exp(logits - m).sum())


def similarity_distribution(q: np.ndarray, D: np.ndarray, tau: float) -> np.ndarray:
    """Softmax over the batch documents of cosine / tau."""
    if D.shape[0] < 2:
        raise ValueError("need at least two documents")
    return _softmax(D @ q / tau)


def sym_kl(p, q, eps: float = 1e-8) -> float:
    """0.5 * (KL(p||q) + KL(q||p)), entries floored at ``eps`` inside the logs."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    lp = np.log(np.maximum(p, eps))
    lq = np.log(np.maximum(q, eps))
    return 0.5 * float(np.sum((p - q) * (lp - lq)))


def _sym_kl_grad(p, q, eps):
    lp = np.log(np.maximum(p, eps))
    lq = np.log(np.maximum(q, eps))
    diff = p - q
    gp = 0.5 * ((lp - lq) + np.where(p > eps, diff / np.maximum(p, eps), 0.0))
    gq = 0.5 * (-(lp - lq) - np.where(q > eps, diff / np.maximum(q, eps), 0.0))
    return gp, gq


def supcon_loss(Q: np.ndarray, D: np.ndarray, positives, tau: float):
    """Supervised contrastive loss summed over queries.

    Per query: -mean_{p in P(i)} log softmax(q_i . D / tau)[p], with the
    softmax over all batch documents.
    """
    if len(positives) != Q.shape[0]:
        raise ValueError("one positive set per query required")
    loss = 0.0
    dQ = np.zeros_like(Q)
    dD = np.zeros_like(D)
    for i, pos in enumerate(positives):
        pos = np.asarray(pos, dtype=int)
        if pos.size == 0:
            raise ValueError(f"query {i} has no positive document in the batch")
        logits = D @ Q[i] / tau
        loss += _logsumexp(logits) - logits[pos].mean()
        g = _softmax(logits)
        g[pos] -= 1.0 / pos.size
        dQ[i] = D.T @ g / tau
        dD += np.outer(g, Q[i]) / tau
    return loss, dQ, dD


def exclusion_loss(Q: np.ndarray, D: np.ndarray, edges, gamma: float, tau: float,
                   eps: float = 1e-8):
    """Mean over exclusion edges of max(gamma - SymKL(s_i, s_j), 0)."""
    excl = [e for e in edges if e.kind is Relation.EXCLUSION]
    dQ = np.zeros_like(Q)
    dD = np.zeros_like(D)
    if not excl:
        return 0.0, dQ, dD
    S = _softmax(Q @ D.T / tau)
    loss = 0.0
    w = 1.0 / len(excl)
    for e in excl:
        i, j = e.src, e.dst
        gap = gamma - sym_kl(S[i], S[j], eps)
        if gap <= 0:
            continue
        loss += w * gap
        gp, gq = _sym_kl_grad(S[i], S[j], eps)
        for row, gs in ((i, -w * gp), (j, -w * gq)):
            dl = S[row] * (gs - S[row] @ gs) / tau
            dQ[row] += D.T @ dl
            dD += np.outer(dl, Q[row])
    return loss, dQ, dD


def subset_similarity(cos, eps: float = 1e-8):
    """Map cosine into (0, 1] for the log-space t-norm penalty."""
    return np.clip((np.asarray(cos) + 1.0) / 2.0, eps, 1.0)


def subset_loss(Q: np.ndarray, D: np.ndarray, edges, gamma: float, eps: float = 1e-8,
                reduction: str = "sum"):
    """Sum over subset edges (q1 -> q2) and batch documents d of
    max(log sim(q1, d) - log sim(q2, d) + gamma, 0).

    ``reduction="mean"`` divides by the number of (edge, document) terms.
    """
    sub = [e for e in edges if e.kind is Relation.SUBSET]
    dQ = np.zeros_like(Q)
    dD = np.zeros_like(D)
    if not sub:
        return 0.0, dQ, dD
    C = Q @ D.T
    raw = (C + 1.0) / 2.0
    sim = np.clip(raw, eps, 1.0)
    inside = (raw > eps) & (raw < 1.0)
    logsim = np.log(sim)
    scale = 1.0 / (len(sub) * D.shape[0]) if reduction == "mean" else 1.0
    loss = 0.0
    for e in sub:
        a, b = e.src, e.dst
        terms = logsim[a] - logsim[b] + gamma
        active = terms > 0
        loss += scale * float(terms[active].sum())
        # d log sim / d cos = 0.5 / sim inside the clamp, 0 outside
        ga = scale * np.where(active & inside[a], 0.5 / sim[a], 0.0)
        gb = -scale * np.where(active & inside[b], 0.5 / sim[b], 0.0)
        dQ[a] += D.T @ ga
        dQ[b] += D.T @ gb
        dD += np.outer(ga, Q[a]) + np.outer(gb, Q[b])
    return loss, dQ, dD


def joint_loss(Q: np.ndarray, D: np.ndarray, positives, edges, config: LossConfig):
    """L_supcon + lambda_e * L_exclusion + lambda_s * L_subset.

    Returns ``(components, dQ, dD)`` where components holds each term and
    the weighted total under ``"joint"``.
    """
    sc, sq, sd = supcon_loss(Q, D, positives, config.tau)
    ex, eq, ed = exclusion_loss(Q, D, edges, config.gamma_e, config.exclusion_tau, config.eps)
    sb, bq, bd = subset_loss(Q, D, edges, config.gamma_s, config.eps, config.subset_reduction)
    parts = {"supcon": sc, "exclusion": ex, "subset": sb}
    for name, value in parts.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(f"{name} loss is not finite ({value})")
    total = sc + config.lambda_e * ex + config.lambda_s * sb
    dQ = sq + config.lambda_e * eq + config.lambda_s * bq
    dD = sd + config.lambda_e * ed + config.lambda_s * bd
    parts["joint"] = total
    return parts, dQ, dD
