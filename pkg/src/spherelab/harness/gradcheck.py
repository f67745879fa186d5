"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import BadParams, NonFinite

LossEval = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def numeric_gradient(fn: Callable[[np.ndarray], float], point: np.ndarray, h: float) -> np.ndarray:
    point = np.asarray(point, dtype=np.float64)
    grad = np.empty_like(point)
    x = point.copy()
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = fn(x)
        flat[k] = orig - h
        down = fn(x)
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return grad


def finite_diff_check(loss_eval: LossEval, point, h: float = 1e-5) -> float:
    """Max over coordinates of |numeric - analytic| / max(1e-12, |analytic|).

    ``loss_eval(x)`` must return ``(value, analytic_gradient)``.
    """
    if not 1e-8 <= h <= 1e-3:
        raise BadParams(f"step h={h:g} outside [1e-8, 1e-3]")
    point = np.asarray(point, dtype=np.float64)
    _, analytic = loss_eval(point)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != point.shape:
        raise BadParams("analytic gradient shape does not match the point")
    numeric = numeric_gradient(lambda x: loss_eval(x)[0], point, h)
    if not (np.all(np.isfinite(numeric)) and np.all(np.isfinite(analytic))):
        raise NonFinite("non-finite gradient encountered during finite-difference check")
    err = np.abs(numeric - analytic) / np.maximum(1e-12, np.abs(analytic))
    return float(np.max(err))
