"""Vector and batch primitives: normalization, angular similarities, norm statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadParams, ZeroNorm

# Norms at or below this are treated as degenerate embeddings.
MIN_NORM = 1e-30


@dataclass
class EmbeddingBatch:
    """N embeddings of dimension D with integer class labels."""

    data: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 2:
            raise BadParams(f"embedding data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 2:
            raise BadParams(f"need N >= 1 and D >= 2, got shape {self.data.shape}")
        if self.labels.shape != (self.data.shape[0],):
            raise BadParams("labels must be a vector with one entry per row")
        if not np.all(np.isfinite(self.data)):
            raise BadParams("embedding data contains non-finite entries")

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "EmbeddingBatch":
        return EmbeddingBatch(data, self.labels)


@dataclass(frozen=True)
class UnitEmbedding:
    direction: np.ndarray
    source_norm: float


@dataclass(frozen=True)
class NormStats:
    mean: float
    variance: float
    bin_edges: np.ndarray
    counts: np.ndarray


def l2_normalize(v) -> UnitEmbedding:
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not norm > MIN_NORM:
        raise ZeroNorm(f"cannot normalize vector with norm {norm:g}")
    return UnitEmbedding(direction=v / norm, source_norm=norm)


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise version of :func:`l2_normalize`; returns (directions, norms)."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    bad = ~(norms > MIN_NORM)
    if np.any(bad):
        raise ZeroNorm(f"rows {np.flatnonzero(bad).tolist()} have (near) zero norm")
    return x / norms[:, None], norms


def tangent_project(unit: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Apply (I - u u^T) row-wise, removing the component of ``vec`` along ``unit``.

    The projection is applied twice so the residual radial component sits at
    rounding level relative to the result, not relative to the input.
    """
    out = vec - np.sum(vec * unit, axis=-1, keepdims=True) * unit
    return out - np.sum(out * unit, axis=-1, keepdims=True) * unit


def _clamp_cos(c):
    return np.clip(c, -1.0, 1.0)


def cosine_distance(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``."""
    ua = l2_normalize(a).direction
    ub = l2_normalize(b).direction
    return float(_clamp_cos(np.dot(ua, ub)))


def normalized_euclidean(a, b) -> float:
    """Squared Euclidean distance between the normalized vectors, in [0, 4]."""
    diff = l2_normalize(a).direction - l2_normalize(b).direction
    return float(min(4.0, max(0.0, np.dot(diff, diff))))


def cosine_matrix(unit: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
    other = unit if other is None else other
    return _clamp_cos(unit @ other.T)


def batch_norm_stats(batch: EmbeddingBatch | np.ndarray, bins: int | np.ndarray = 20) -> NormStats:
    """Mean, population variance and histogram of the row norms."""
    data = batch.data if isinstance(batch, EmbeddingBatch) else np.asarray(batch, dtype=np.float64)
    norms = np.linalg.norm(data, axis=1)
    mean = float(np.mean(norms))
    variance = float(np.mean((norms - mean) ** 2))
    counts, edges = norm_histogram(norms, bins)
    return NormStats(mean=mean, variance=variance, bin_edges=edges, counts=counts)


def norm_histogram(norms, bins: int | np.ndarray = 20) -> tuple[np.ndarray, np.ndarray]:
    """``np.histogram`` that tolerates (nearly) identical values."""
    norms = np.asarray(norms, dtype=np.float64)
    if np.ndim(bins):
        return np.histogram(norms, bins=bins)
    lo, hi = float(norms.min()), float(norms.max())
    if hi - lo <= 1e-9 * max(1.0, hi):
        # centre a unit-width range on the common value
        lo, hi = lo - 0.5, hi + 0.5
    return np.histogram(norms, bins=bins, range=(lo, hi))


def norm_moments(x: np.ndarray) -> tuple[float, float]:
    """Mean and population variance of the row norms."""
    norms = np.linalg.norm(x, axis=1)
    mean = float(np.mean(norms))
    return mean, float(np.mean((norms - mean) ** 2))
