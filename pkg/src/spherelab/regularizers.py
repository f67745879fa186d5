"""Norm regularizers: the spherical embedding constraint (SEC) and L2-reg.

SEC penalizes ``(1/N) sum_i (|f_i| - mu)^2`` where the target radius ``mu`` is
the current batch-mean norm, a fixed value, or an exponential moving average of
batch-mean norms. ``mu`` is treated as a constant when differentiating.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import EmbeddingBatch, normalize_rows
from .errors import BadParams, BadSchedule
from .losses import LossOutput

REG_KINDS = ("sec", "l2reg", "none")
MU_MODES = ("batch_mean", "fixed", "ema")
SCHEDULES = ("constant", "linear_ramp", "capped_ramp", "warmup_epochs")

# ceiling slope of the capped ramp: eta_t = min(eta, CAP_RATE * t / total)
CAP_RATE = 500.0


@dataclass
class RegularizerConfig:
    kind: str = "none"
    mu_mode: str = "batch_mean"
    mu_value: float = 1.0
    rho: float = 0.01
    eta: float = 0.0
    schedule: str = "constant"
    # warmup_epochs: eta is 0 before start_epoch, ramps linearly over that epoch
    start_epoch: int = 3
    num_epochs: int = 16
    # seed the EMA radius from a full pass over the training set instead of the first batch
    init_from_dataset: bool = False

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise BadParams(f"unknown regularizer kind {self.kind!r}")
        if self.mu_mode not in MU_MODES:
            raise BadParams(f"unknown mu_mode {self.mu_mode!r}")
        if self.schedule not in SCHEDULES:
            raise BadParams(f"unknown schedule {self.schedule!r}")
        if not self.eta >= 0:
            raise BadParams("eta must be non-negative")
        if not 0.0 <= self.rho <= 1.0:
            raise BadParams("rho must lie in [0, 1]")
        if self.mu_mode == "fixed" and not self.mu_value >= 0:
            raise BadParams("fixed mu must be non-negative")
        if self.schedule == "warmup_epochs" and not 0 <= self.start_epoch < self.num_epochs:
            raise BadParams("warmup start_epoch must lie in [0, num_epochs)")


@dataclass
class RegularizerState:
    mu: Optional[float] = None
    t: int = 0


def _target_radius(norms: np.ndarray, cfg: RegularizerConfig, state: RegularizerState) -> float:
    batch_mean = float(np.mean(norms))
    if cfg.mu_mode == "batch_mean":
        return batch_mean
    if cfg.mu_mode == "fixed":
        return float(cfg.mu_value)
    if state.mu is None:
        return batch_mean
    return (1.0 - cfg.rho) * state.mu + cfg.rho * batch_mean


def sec_loss(batch: EmbeddingBatch, cfg: RegularizerConfig,
             state: Optional[RegularizerState] = None) -> tuple[LossOutput, RegularizerState]:
    """SEC penalty and gradient ``(2/N)(|f_i| - mu) u_i``; returns the advanced state."""
    state = state or RegularizerState()
    unit, norms = normalize_rows(batch.data)
    mu = _target_radius(norms, cfg, state)
    dev = norms - mu
    N = batch.N
    value = float(np.mean(dev * dev))
    grad = (2.0 / N) * dev[:, None] * unit
    out = LossOutput(kind="sec", value=value, grad_embeddings=grad)
    return out, replace(state, mu=mu, t=state.t + 1)


def l2_reg_loss(batch: EmbeddingBatch, cfg: Optional[RegularizerConfig] = None) -> LossOutput:
    N = batch.N
    x = batch.data
    value = float(np.sum(x * x) / N)
    return LossOutput(kind="l2reg", value=value, grad_embeddings=(2.0 / N) * x)


def regularizer_loss(batch: EmbeddingBatch, cfg: RegularizerConfig,
                     state: RegularizerState) -> tuple[LossOutput, RegularizerState]:
    if cfg.kind == "sec":
        return sec_loss(batch, cfg, state)
    if cfg.kind == "l2reg":
        return l2_reg_loss(batch, cfg), replace(state, t=state.t + 1)
    zero = LossOutput(kind="none", value=0.0, grad_embeddings=np.zeros_like(batch.data))
    return zero, replace(state, t=state.t + 1)


def eta_schedule(cfg: RegularizerConfig, t: int, total: int) -> float:
    """Penalty weight at iteration ``t`` of ``total``."""
    if total <= 0:
        raise BadSchedule("total iterations must be positive")
    if not 0 <= t <= total:
        raise BadSchedule(f"iteration {t} outside [0, {total}]")
    eta = cfg.eta
    if cfg.schedule == "constant":
        return eta
    if cfg.schedule == "linear_ramp":
        return eta * t / total
    if cfg.schedule == "capped_ramp":
        return min(eta, CAP_RATE * t / total)
    per_epoch = total / cfg.num_epochs
    start = cfg.start_epoch * per_epoch
    if t < start:
        return 0.0
    if t >= start + per_epoch:
        return eta
    return eta * (t - start) / per_epoch
