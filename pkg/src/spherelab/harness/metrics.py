"""Retrieval and clustering metrics: Recall@K, NMI and pairwise F1."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import BadK, BadParams, DegenerateClustering

KMEANS_MAX_ITER = 100


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-30)


def recall_at_k(embeddings, labels, ks: Sequence[int]) -> list[float]:
    """Fraction of queries with a same-label point among their k cosine neighbours (self excluded)."""
    labels = np.asarray(labels)
    M = len(labels)
    ks = [int(k) for k in ks]
    if not ks or any(k < 1 or k >= M for k in ks) or ks != sorted(ks):
        raise BadK(f"ks must be ascending integers in [1, {M - 1}], got {ks}")
    unit = _unit_rows(embeddings)
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    order = np.argsort(-sim, axis=1, kind="stable")[:, : ks[-1]]
    match = labels[order] == labels[:, None]
    first_hit = np.where(match.any(axis=1), match.argmax(axis=1), ks[-1])
    return [float(np.mean(first_hit < k)) for k in ks]


def kmeans(x: np.ndarray, K: int, seed: int, max_iter: int = KMEANS_MAX_ITER) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding. Raises if a cluster empties."""
    rng = np.random.default_rng(seed)
    M = x.shape[0]
    if K > M:
        raise BadParams("more clusters than points")
    centers = np.empty((K, x.shape[1]))
    centers[0] = x[rng.integers(M)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, K):
        total = d2.sum()
        pick = rng.choice(M, p=d2 / total) if total > 0 else rng.integers(M)
        centers[c] = x[pick]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))

    assign = None
    for _ in range(max_iter):
        dist = np.sum(x * x, axis=1)[:, None] - 2.0 * x @ centers.T + np.sum(centers * centers, axis=1)
        new = np.argmin(dist, axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=K)
        if np.any(counts == 0):
            raise DegenerateClustering(f"cluster(s) {np.flatnonzero(counts == 0).tolist()} emptied")
        centers = np.zeros_like(centers)
        np.add.at(centers, assign, x)
        centers /= counts[:, None]
    return assign


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    return table


def nmi(labels, clusters) -> float:
    """Mutual information normalized by the arithmetic mean of the two entropies."""
    table = _contingency(np.asarray(labels), np.asarray(clusters))
    n = table.sum()
    pij = table / n
    pi, pj = pij.sum(axis=1), pij.sum(axis=0)
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / np.outer(pi, pj)[nz])))
    hi = -float(np.sum(pi * np.log(pi)))
    hj = -float(np.sum(pj * np.log(pj)))
    if hi == 0 and hj == 0:
        return 1.0
    denom = 0.5 * (hi + hj)
    return float(min(1.0, max(0.0, mi / denom))) if denom > 0 else 0.0


def pairwise_f1(labels, clusters) -> float:
    """F1 over sample pairs: a pair is predicted positive when both share a cluster."""
    table = _contingency(np.asarray(labels), np.asarray(clusters))

    def pairs(c):
        return float(np.sum(c * (c - 1) / 2.0))

    tp = pairs(table)
    pred = pairs(table.sum(axis=0))
    true = pairs(table.sum(axis=1))
    if tp == 0:
        return 0.0
    precision, recall = tp / pred, tp / true
    return 2.0 * precision * recall / (precision + recall)


def nmi_f1(embeddings, labels, K: int, seed: int) -> tuple[float, float]:
    """k-means the normalized embeddings into K clusters, then score against labels."""
    if K < 2:
        raise BadParams("need K >= 2 clusters")
    unit = _unit_rows(embeddings)
    try:
        assign = kmeans(unit, K, seed)
    except DegenerateClustering:
        assign = kmeans(unit, K, seed + 1)
    return nmi(labels, assign), pairwise_f1(labels, assign)
