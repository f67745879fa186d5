"""SGD, SGD with momentum and Adam, plus first-order predictions of direction updates.

Momentum follows ``v <- beta v + g; f <- f - lr v`` (no dampening). Adam comes in
two flavours: the usual per-coordinate second moment, and a per-row scalar
second moment accumulating ``|g_row|^2``, which is the form the direction-update
analysis is stated for.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import l2_normalize
from .errors import BadParams, ShapeMismatch, ZeroNorm

OPTIMIZER_KINDS = ("sgd", "momentum", "adam")
ADAM_VARIANTS = ("coordinate", "row")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    adam_variant: str = "coordinate"

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise BadParams(f"unknown optimizer {self.kind!r}")
        if self.adam_variant not in ADAM_VARIANTS:
            raise BadParams(f"unknown adam variant {self.adam_variant!r}")
        if not self.lr >= 0:
            raise BadParams("learning rate must be non-negative")
        for name in ("momentum", "beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise BadParams(f"{name} must lie in [0, 1)")
        if not self.eps > 0:
            raise BadParams("eps must be positive")


@dataclass
class OptimizerState:
    v: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    t: int = 0

    @classmethod
    def zeros(cls, shape, cfg: OptimizerConfig) -> "OptimizerState":
        v = np.zeros(shape)
        if cfg.kind != "adam":
            return cls(v=v, g=None, t=0)
        g_shape = shape[:-1] + (1,) if cfg.adam_variant == "row" else shape
        return cls(v=v, g=np.zeros(g_shape), t=0)


@dataclass(frozen=True)
class DirectionDelta:
    delta_theta: float
    tan_delta_theta: float


def optimizer_step(params: np.ndarray, grads: np.ndarray, cfg: OptimizerConfig,
                   state: Optional[OptimizerState] = None) -> tuple[np.ndarray, OptimizerState]:
    """One update; returns new parameters and new state (inputs are not modified)."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeMismatch(f"params {params.shape} vs grads {grads.shape}")
    if state is None or state.v is None:
        state = OptimizerState.zeros(params.shape, cfg)
    elif state.v.shape != params.shape:
        raise ShapeMismatch(f"state {state.v.shape} vs params {params.shape}")
    t = state.t + 1

    if cfg.kind == "sgd":
        return params - cfg.lr * grads, OptimizerState(v=state.v, g=state.g, t=t)

    if cfg.kind == "momentum":
        v = cfg.momentum * state.v + grads
        return params - cfg.lr * v, OptimizerState(v=v, g=None, t=t)

    v = cfg.beta1 * state.v + (1.0 - cfg.beta1) * grads
    if cfg.adam_variant == "row":
        sq = np.sum(grads * grads, axis=-1, keepdims=True)
    else:
        sq = grads * grads
    g = cfg.beta2 * state.g + (1.0 - cfg.beta2) * sq
    v_hat = v / (1.0 - cfg.beta1 ** t)
    g_hat = g / (1.0 - cfg.beta2 ** t)
    new = params - cfg.lr * v_hat / (np.sqrt(g_hat) + cfg.eps)
    return new, OptimizerState(v=v, g=g, t=t)


# ---------------------------------------------------------------------------
# direction-update analysis


def _tangent(u: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x - np.dot(u, x) * u


def measure_direction_change(f_before, f_after) -> DirectionDelta:
    """Angle between two embeddings' directions."""
    u = l2_normalize(f_before).direction
    w = l2_normalize(f_after).direction
    # atan2 form keeps precision for tiny angles where arccos of the dot product does not
    theta = float(np.arctan2(np.linalg.norm(w - np.dot(u, w) * u), np.dot(u, w)))
    return DirectionDelta(delta_theta=theta, tan_delta_theta=_safe_tan(theta))


def _safe_tan(theta: float) -> float:
    return float(np.tan(theta)) if theta < np.pi / 2 else float("inf")


def tan_delta_closed_form(f_i, pair_grads: Sequence, lr: float = 1.0) -> DirectionDelta:
    """Direction change of one plain gradient step from its pair decomposition.

    ``pair_grads`` are :class:`~spherelab.losses.PairGradient` records for
    anchor ``i``; only their weights, kappa and partner directions are used so
    the result can be re-evaluated at a rescaled ``f_i``.
    """
    unit = l2_normalize(f_i)
    u, norm = unit.direction, unit.source_norm
    acc = np.zeros_like(u)
    for pg in pair_grads:
        partner = pg.partner_direction
        acc += pg.weight * pg.kappa * (-partner + np.dot(u, partner) * u)
    tan = lr * float(np.linalg.norm(acc)) / norm ** 2
    return DirectionDelta(delta_theta=float(np.arctan(tan)), tan_delta_theta=tan)


def predicted_unit_update(f_t, grad_wrt_unit, cfg: OptimizerConfig,
                          state: Optional[OptimizerState] = None) -> np.ndarray:
    """First-order prediction of the next direction of a single embedding.

    ``state`` holds this embedding's optimizer accumulators before the step
    (``v`` a D-vector, ``g`` a scalar for the row-wise Adam). The step index in
    the Adam bias corrections is ``state.t + 1``, matching :func:`optimizer_step`.
    The Adam prediction keeps ``eps`` in the denominator; with ``eps -> 0`` it is
    the textbook expansion.
    """
    unit = l2_normalize(f_t)
    u, norm = unit.direction, unit.source_norm
    d = np.asarray(grad_wrt_unit, dtype=np.float64)
    pd = _tangent(u, d)
    t = (state.t if state is not None else 0) + 1
    v = state.v if state is not None and state.v is not None else np.zeros_like(u)

    if cfg.kind == "sgd":
        return u - cfg.lr / norm ** 2 * _tangent(u, pd)
    if cfg.kind == "momentum":
        return u - cfg.lr / norm ** 2 * _tangent(u, norm * cfg.momentum * v + pd)

    if cfg.adam_variant != "row":
        raise BadParams("direction prediction for Adam is defined for the row-wise variant")
    g = float(np.ravel(state.g)[0]) if state is not None and state.g is not None else 0.0
    b1, b2 = cfg.beta1, cfg.beta2
    num = norm * b1 * v + (1.0 - b1) * pd
    # |f|^2 * g_{t+1}, written with the tangent-projected gradient
    second = norm ** 2 * b2 * g + (1.0 - b2) * float(np.dot(d, pd))
    if second <= 0:
        if np.allclose(num, 0.0):
            return u.copy()
        raise ZeroNorm("zero second moment with nonzero first moment")
    bc1, bc2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    # sqrt(g_hat) + eps with g_hat = g_{t+1} / bc2
    denom = bc1 * (np.sqrt(second) / norm / np.sqrt(bc2) + cfg.eps)
    return u - cfg.lr / norm * _tangent(u, num / norm) / denom
