"""Embedding models: a free per-sample embedding table and a one-hidden-layer MLP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BadParams

MODEL_KINDS = ("free_table", "mlp")


@dataclass
class ModelConfig:
    kind: str = "free_table"
    embedding_dim: int = 16
    hidden_dim: int = 64
    # free_table rows are a random projection of the inputs; norm_spread > 0
    # rescales each row by exp(norm_spread * z) for extra norm heterogeneity
    norm_spread: float = 0.0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise BadParams(f"unknown model kind {self.kind!r}")
        if self.embedding_dim < 2 or self.hidden_dim < 1:
            raise BadParams("embedding_dim must be >= 2 and hidden_dim >= 1")
        if self.norm_spread < 0 or not self.init_scale > 0:
            raise BadParams("norm_spread must be >= 0 and init_scale > 0")


class FreeTable:
    """Each training sample owns a trainable embedding row."""

    kind = "free_table"

    def __init__(self, table: np.ndarray):
        self.params = {"table": np.asarray(table, dtype=np.float64)}

    @classmethod
    def init(cls, points: np.ndarray, cfg: ModelConfig, rng: np.random.Generator) -> "FreeTable":
        din = points.shape[1]
        proj = rng.standard_normal((din, cfg.embedding_dim)) / np.sqrt(din)
        jitter = np.exp(cfg.norm_spread * rng.standard_normal(points.shape[0]))
        return cls(cfg.init_scale * (points @ proj) * jitter[:, None])

    def forward(self, idx: np.ndarray, points: np.ndarray) -> np.ndarray:
        return self.params["table"][idx].copy()

    def backward(self, idx: np.ndarray, points: np.ndarray, grad_out: np.ndarray) -> dict:
        grad = np.zeros_like(self.params["table"])
        np.add.at(grad, idx, grad_out)
        return {"table": grad}

    def embed_all(self, points: np.ndarray) -> np.ndarray:
        return self.params["table"].copy()


class MLP:
    """x -> tanh(x W1 + b1) W2 + b2."""

    kind = "mlp"

    def __init__(self, params: dict):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    @classmethod
    def init(cls, points: np.ndarray, cfg: ModelConfig, rng: np.random.Generator) -> "MLP":
        din = points.shape[1]
        h, d = cfg.hidden_dim, cfg.embedding_dim
        return cls({
            "W1": rng.standard_normal((din, h)) / np.sqrt(din),
            "b1": np.zeros(h),
            "W2": cfg.init_scale * rng.standard_normal((h, d)) / np.sqrt(h),
            "b2": np.zeros(d),
        })

    def _hidden(self, x):
        return np.tanh(x @ self.params["W1"] + self.params["b1"])

    def forward(self, idx: np.ndarray, points: np.ndarray) -> np.ndarray:
        return self.embed_all(points[idx])

    def backward(self, idx: np.ndarray, points: np.ndarray, grad_out: np.ndarray) -> dict:
        x = points[idx]
        hid = self._hidden(x)
        dpre = (grad_out @ self.params["W2"].T) * (1.0 - hid * hid)
        return {
            "W1": x.T @ dpre,
            "b1": dpre.sum(axis=0),
            "W2": hid.T @ grad_out,
            "b2": grad_out.sum(axis=0),
        }

    def embed_all(self, points: np.ndarray) -> np.ndarray:
        return self._hidden(points) @ self.params["W2"] + self.params["b2"]


def build_model(cfg: ModelConfig, points: np.ndarray, rng: np.random.Generator):
    if cfg.kind == "free_table":
        return FreeTable.init(points, cfg, rng)
    return MLP.init(points, cfg, rng)
