"""Synthetic labelled point clouds and class-balanced batch sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BadParams, Infeasible


@dataclass
class SyntheticDataset:
    points: np.ndarray
    labels: np.ndarray
    K: int
    params: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def input_dim(self) -> int:
        return self.points.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K)


@dataclass(frozen=True)
class BatchSpec:
    classes_per_batch: int = 10
    samples_per_class: int = 3

    def __post_init__(self):
        if self.classes_per_batch < 1 or self.samples_per_class < 1:
            raise BadParams("batch spec needs at least one class and one sample per class")

    @property
    def N(self) -> int:
        return self.classes_per_batch * self.samples_per_class


def gen_synthetic(K: int, per_class: int, Din: int, spread: float, sigma: float,
                  seed: int) -> SyntheticDataset:
    """K Gaussian blobs whose centers sit on a sphere of radius ``spread``."""
    if K < 2 or per_class < 2:
        raise BadParams("need K >= 2 classes with per_class >= 2 points each")
    if Din < 1 or spread < 0 or sigma < 0:
        raise BadParams("Din must be positive, spread and sigma non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((K, Din))
    centers *= spread / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(K), per_class)
    points = centers[labels] + sigma * rng.standard_normal((K * per_class, Din))
    params = dict(K=K, per_class=per_class, Din=Din, spread=spread, sigma=sigma, seed=seed)
    return SyntheticDataset(points=points, labels=labels, K=K, params=params)


def sample_batch(ds: SyntheticDataset, spec: BatchSpec, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``C`` random classes with ``Kp`` random members each, grouped by class."""
    C, Kp = spec.classes_per_batch, spec.samples_per_class
    if C > ds.K:
        raise Infeasible(f"batch asks for {C} classes but the dataset has {ds.K}")
    if np.min(ds.class_counts()) < Kp:
        raise Infeasible(f"some class has fewer than {Kp} samples")
    classes = rng.choice(ds.K, size=C, replace=False)
    idx = [rng.choice(np.flatnonzero(ds.labels == c), size=Kp, replace=False) for c in classes]
    return np.concatenate(idx)


def save_dataset_csv(ds: SyntheticDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label"] + [f"x{j}" for j in range(ds.input_dim)])
        for i, (lab, row) in enumerate(zip(ds.labels, ds.points)):
            w.writerow([i, int(lab)] + [repr(float(v)) for v in row])


def load_dataset_csv(path) -> SyntheticDataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["id", "label"] or any(h != f"x{j}" for j, h in enumerate(header[2:])):
        raise BadParams("dataset CSV header must be id,label,x0..x{Din-1}")
    body.sort(key=lambda r: int(r[0]))
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    points = np.array([[float(v) for v in r[2:]] for r in body])
    return SyntheticDataset(points=points, labels=labels, K=int(labels.max()) + 1)
