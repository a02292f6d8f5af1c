"""Direct, loop-based re-implementations of the training objectives and
metrics, written against the formulas rather than the package code."""

from __future__ import annotations

import math


def dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def softmax(xs):
    m = max(xs)
    ex = [math.exp(x - m) for x in xs]
    s = sum(ex)
    return [e / s for e in ex]


def supcon(Q, D, positives, tau):
    total = 0.0
    for i, q in enumerate(Q):
        logits = [dot(q, d) / tau for d in D]
        denom = sum(math.exp(z) for z in logits)
        inner = sum(math.log(math.exp(logits[p]) / denom) for p in positives[i])
        total += -inner / len(positives[i])
    return total


def sym_kl(p, q, eps=1e-8):
    kl_pq = sum(a * (math.log(max(a, eps)) - math.log(max(b, eps))) for a, b in zip(p, q))
    kl_qp = sum(b * (math.log(max(b, eps)) - math.log(max(a, eps))) for a, b in zip(p, q))
    return 0.5 * (kl_pq + kl_qp)


def exclusion(Q, D, pairs, gamma, tau, eps=1e-8):
    if not pairs:
        return 0.0
    dists = [softmax([dot(q, d) / tau for d in D]) for q in Q]
    return sum(max(gamma - sym_kl(dists[i], dists[j], eps), 0.0) for i, j in pairs) / len(pairs)


def subset(Q, D, pairs, gamma, eps=1e-8):
    def sim(q, d):
        return min(max((dot(q, d) + 1.0) / 2.0, eps), 1.0)

    return sum(max(math.log(sim(Q[a], d)) - math.log(sim(Q[b], d)) + gamma, 0.0)
               for a, b in pairs for d in D)


def pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)
