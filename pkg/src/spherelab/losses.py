"""Angular metric-learning losses with analytic gradients.

Pair-based losses are written in terms of a similarity matrix ``S`` over the
normalized embeddings. Each one returns ``dL/dS`` as a pair-weight matrix and
the gradient with respect to the raw embeddings is assembled from it as

    dL/df_i = sum_j w_ij * kappa / |f_i| * (-u_j + cos_ij * u_i)

with ``u = f / |f|``, ``kappa = 2`` for the normalized Euclidean distance
(S = |u_i - u_j|^2) and ``kappa = -1`` for the cosine similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import EmbeddingBatch, cosine_matrix, normalize_rows, tangent_project
from .errors import BadLabel, BadParams, InvalidTriplet, NoValidPairs, UnsupportedLoss

LOSS_KINDS = ("triplet", "semihard_triplet", "npair", "multi_similarity", "cos_softmax", "ntxent", "none")
SOFTMAX_VARIANTS = ("plain", "sphereface", "cosface", "arcface")
DISTANCES = ("normalized_euclidean", "cosine")

KAPPA = {"normalized_euclidean": 2.0, "cosine": -1.0}

# arccos guard for margin variants that need the angle itself
_ARC_CLIP = 1.0 - 1e-12

# Per-kind hyperparameters applied when a field is left unset.
LOSS_DEFAULTS = {
    "triplet": {"margin": 1.0, "distance": "normalized_euclidean"},
    "semihard_triplet": {"margin": 0.2, "distance": "normalized_euclidean"},
    "npair": {"scale": 25.0, "distance": "cosine"},
    "multi_similarity": {"distance": "cosine"},
    "cos_softmax": {"scale": 64.0},
    "ntxent": {"temperature": 0.5, "distance": "cosine"},
    "none": {},
}
SOFTMAX_MARGINS = {"plain": 0.0, "sphereface": 3, "cosface": 0.35, "arcface": 0.45}


@dataclass
class MSParams:
    """Multi-similarity loss parameters: pair-mining margin, threshold, pos/neg scales."""

    epsilon: float = 0.1
    lam: float = 0.5
    alpha: float = 2.0
    beta: float = 40.0


@dataclass
class LossConfig:
    kind: str = "triplet"
    margin: Optional[float] = None
    scale: Optional[float] = None
    temperature: Optional[float] = None
    distance: Optional[str] = None
    softmax_variant: str = "cosface"
    ms: MSParams = field(default_factory=MSParams)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise BadParams(f"unknown loss kind {self.kind!r}")
        if self.softmax_variant not in SOFTMAX_VARIANTS:
            raise BadParams(f"unknown softmax variant {self.softmax_variant!r}")
        if isinstance(self.ms, dict):
            self.ms = MSParams(**self.ms)
        defaults = LOSS_DEFAULTS[self.kind]
        if self.margin is None:
            if self.kind == "cos_softmax":
                self.margin = SOFTMAX_MARGINS[self.softmax_variant]
            else:
                self.margin = defaults.get("margin", 0.0)
        if self.scale is None:
            self.scale = defaults.get("scale", 1.0)
        if self.temperature is None:
            self.temperature = defaults.get("temperature", 0.5)
        if self.distance is None:
            self.distance = defaults.get("distance", "cosine")
        if self.distance not in DISTANCES:
            raise BadParams(f"unknown distance {self.distance!r}")
        if not self.scale > 0:
            raise BadParams("scale must be positive")
        if not self.temperature > 0:
            raise BadParams("temperature must be positive")
        if self.margin < 0:
            raise BadParams("margin must be non-negative")
        if self.kind == "cos_softmax" and self.softmax_variant == "sphereface" and self.margin != 0:
            if self.margin != int(self.margin) or self.margin < 1:
                raise BadParams("sphereface margin must be a positive integer")

    @property
    def kappa(self) -> float:
        return KAPPA[self.distance]


@dataclass
class PairGradient:
    """Contribution of pair (i, j) to dL/df_i: ``weight * angular_grad``."""

    pair: tuple[int, int]
    weight: float
    angular_grad: np.ndarray
    kappa: float
    partner_direction: np.ndarray


@dataclass
class ClassTemplates:
    W: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise BadParams("templates must be a K x D matrix")

    @property
    def K(self) -> int:
        return self.W.shape[0]


@dataclass
class LossOutput:
    kind: str
    value: float
    grad_embeddings: np.ndarray
    grad_templates: Optional[np.ndarray] = None
    # dL/dS_ij as each similarity appears in the loss (one-sided)
    pair_weights: Optional[np.ndarray] = None
    kappa: Optional[float] = None
    # dL/du with u the normalized embeddings
    grad_unit: Optional[np.ndarray] = None

    @property
    def symmetric_weights(self) -> np.ndarray:
        """Total weight of S_ij in dL/df_i, i.e. w_ij + w_ji with the diagonal dropped."""
        w = self.pair_weights + self.pair_weights.T
        np.fill_diagonal(w, 0.0)
        return w


# ---------------------------------------------------------------------------
# shared assembly


def _similarities(unit: np.ndarray, distance: str) -> tuple[np.ndarray, np.ndarray]:
    cos = cosine_matrix(unit)
    if distance == "normalized_euclidean":
        return 2.0 - 2.0 * cos, cos
    return cos, cos


def _pair_output(kind: str, value: float, phi: np.ndarray, unit: np.ndarray,
                 norms: np.ndarray, kappa: float) -> LossOutput:
    w = phi + phi.T
    np.fill_diagonal(w, 0.0)
    grad_unit = -kappa * (w @ unit)
    grad = tangent_project(unit, grad_unit) / norms[:, None]
    return LossOutput(kind=kind, value=float(value), grad_embeddings=grad,
                      pair_weights=phi, kappa=kappa, grad_unit=grad_unit)


def _require_distance(cfg: LossConfig, expected: str):
    if cfg.distance != expected:
        raise BadParams(f"{cfg.kind} loss requires distance={expected!r}, got {cfg.distance!r}")


def positive_pairs(labels: np.ndarray) -> np.ndarray:
    """All ordered (a, p) index pairs with equal labels and a != p."""
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    return np.argwhere(same)


def all_triplets(labels) -> np.ndarray:
    """Every valid (a, p, n) triplet of a labelled batch."""
    labels = np.asarray(labels)
    out = []
    for a, p in positive_pairs(labels):
        for n in np.flatnonzero(labels != labels[a]):
            out.append((a, p, n))
    return np.asarray(out, dtype=np.int64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# triplet family


def triplet_loss(batch: EmbeddingBatch, triplets, cfg: LossConfig) -> LossOutput:
    _require_distance(cfg, "normalized_euclidean")
    trip = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if len(trip) == 0:
        raise NoValidPairs("no triplets given")
    a, p, n = trip.T
    y = batch.labels
    if np.any(trip < 0) or np.any(trip >= batch.N):
        raise InvalidTriplet("triplet index out of range")
    if np.any(y[a] != y[p]) or np.any(y[a] == y[n]) or np.any(a == p):
        raise InvalidTriplet("triplets must satisfy y_a == y_p != y_n with a != p")

    unit, norms = normalize_rows(batch.data)
    S, _ = _similarities(unit, "normalized_euclidean")
    slack = S[a, p] - S[a, n] + cfg.margin
    active = slack > 0
    T = len(trip)
    value = np.sum(slack[active]) / T

    phi = np.zeros((batch.N, batch.N))
    np.add.at(phi, (a[active], p[active]), 1.0 / T)
    np.add.at(phi, (a[active], n[active]), -1.0 / T)
    return _pair_output("triplet", value, phi, unit, norms, cfg.kappa)


def semihard_mine(batch: EmbeddingBatch, cfg: LossConfig, rng_seed: int) -> np.ndarray:
    """One negative per anchor-positive pair.

    A negative farther than the positive but inside the margin band is drawn
    uniformly (seeded) when the band is non-empty; otherwise the hardest
    (closest) negative is used.
    """
    y = batch.labels
    pairs = positive_pairs(y)
    if len(pairs) == 0:
        raise NoValidPairs("no class has at least two samples")
    unit, _ = normalize_rows(batch.data)
    d, _ = _similarities(unit, "normalized_euclidean")
    rng = np.random.default_rng(rng_seed)
    out = []
    for a, p in pairs:
        negs = np.flatnonzero(y != y[a])
        if len(negs) == 0:
            continue
        d_ap = d[a, p]
        d_an = d[a, negs]
        band = negs[(d_an > d_ap) & (d_an < d_ap + cfg.margin)]
        if len(band):
            n = band[rng.integers(len(band))]
        else:
            n = negs[np.argmin(d_an)]
        out.append((a, p, n))
    if not out:
        raise NoValidPairs("batch contains a single class; no negatives")
    return np.asarray(out, dtype=np.int64)


def semihard_triplet_loss(batch: EmbeddingBatch, cfg: LossConfig, rng_seed: int = 0) -> LossOutput:
    out = triplet_loss(batch, semihard_mine(batch, cfg, rng_seed), cfg)
    out.kind = "semihard_triplet"
    return out


# ---------------------------------------------------------------------------
# softmax-over-pairs family


def _log1p_sum_exp(z: np.ndarray) -> float:
    """log(1 + sum(exp(z))) without overflow."""
    return float(np.logaddexp(0.0, np.logaddexp.reduce(z))) if len(z) else 0.0


def npair_loss(batch: EmbeddingBatch, cfg: LossConfig) -> LossOutput:
    """Normalized N-pair (tuplet) loss averaged over anchor-positive pairs."""
    _require_distance(cfg, "cosine")
    y = batch.labels
    pairs = positive_pairs(y)
    unit, norms = normalize_rows(batch.data)
    S, _ = _similarities(unit, "cosine")
    s = cfg.scale
    terms = []
    for a, p in pairs:
        negs = np.flatnonzero(y != y[a])
        if len(negs):
            terms.append((a, p, negs))
    if not terms:
        raise NoValidPairs("need an anchor with both a positive and a negative")

    phi = np.zeros((batch.N, batch.N))
    total = 0.0
    for a, p, negs in terms:
        z = s * (S[a, negs] - S[a, p])
        ell = _log1p_sum_exp(z)
        q = np.exp(z - ell)
        total += ell
        phi[a, negs] += s * q
        phi[a, p] -= s * np.sum(q)
    P = len(terms)
    return _pair_output("npair", total / P, phi / P, unit, norms, cfg.kappa)


def multi_similarity_loss(batch: EmbeddingBatch, cfg: LossConfig) -> LossOutput:
    """Multi-similarity loss with epsilon-margin pair mining, averaged over the batch.

    Anchors left without a mined positive or a mined negative contribute zero.
    """
    _require_distance(cfg, "cosine")
    eps, lam, alpha, beta = cfg.ms.epsilon, cfg.ms.lam, cfg.ms.alpha, cfg.ms.beta
    y = batch.labels
    N = batch.N
    unit, norms = normalize_rows(batch.data)
    S, _ = _similarities(unit, "cosine")

    phi = np.zeros((N, N))
    total = 0.0
    has_pairs = False
    for i in range(N):
        pos = np.flatnonzero(y == y[i])
        pos = pos[pos != i]
        neg = np.flatnonzero(y != y[i])
        if len(pos) == 0 or len(neg) == 0:
            continue
        has_pairs = True
        s_pos, s_neg = S[i, pos], S[i, neg]
        kept_neg = neg[s_neg + eps > np.min(s_pos)]
        kept_pos = pos[s_pos - eps < np.max(s_neg)]
        if len(kept_neg) == 0 or len(kept_pos) == 0:
            continue
        zp = -alpha * (S[i, kept_pos] - lam)
        zn = beta * (S[i, kept_neg] - lam)
        lp, ln = _log1p_sum_exp(zp), _log1p_sum_exp(zn)
        total += lp / alpha + ln / beta
        phi[i, kept_pos] += -np.exp(zp - lp)
        phi[i, kept_neg] += np.exp(zn - ln)
    if not has_pairs:
        raise NoValidPairs("need an anchor with both a positive and a negative")
    return _pair_output("multi_similarity", total / N, phi / N, unit, norms, cfg.kappa)


def ntxent_loss(views: EmbeddingBatch, cfg: LossConfig) -> LossOutput:
    """NT-Xent over 2N rows where rows 2i and 2i+1 are the two views of one sample.

    Every other row in the batch serves as a negative for an anchor.
    """
    _require_distance(cfg, "cosine")
    M = views.N
    if M % 2 or M < 4:
        raise NoValidPairs("NT-Xent needs an even number of rows forming at least 2 pairs")
    unit, norms = normalize_rows(views.data)
    S, _ = _similarities(unit, "cosine")
    tau = cfg.temperature
    logits = S / tau
    np.fill_diagonal(logits, -np.inf)
    idx = np.arange(M)
    partner = idx ^ 1
    lse = np.logaddexp.reduce(logits, axis=1)
    per_anchor = lse - logits[idx, partner]
    prob = np.exp(logits - lse[:, None])
    prob[idx, partner] -= 1.0
    phi = prob / (tau * M)
    return _pair_output("ntxent", np.mean(per_anchor), phi, unit, norms, cfg.kappa)


# ---------------------------------------------------------------------------
# cosine softmax family


def _margin_logit(cos_t: np.ndarray, variant: str, m: float) -> tuple[np.ndarray, np.ndarray]:
    """Target-class similarity after the margin and its derivative w.r.t. cos(theta)."""
    if m == 0 or variant == "plain":
        return cos_t.copy(), np.ones_like(cos_t)
    if variant == "cosface":
        return cos_t - m, np.ones_like(cos_t)
    theta = np.arccos(np.clip(cos_t, -_ARC_CLIP, _ARC_CLIP))
    sin_t = np.sin(theta)
    if variant == "arcface":
        return np.cos(theta + m), np.sin(theta + m) / sin_t
    # sphereface: piecewise monotone psi(theta) = (-1)^k cos(m theta) - 2k
    k = np.floor(m * theta / np.pi)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    psi = sign * np.cos(m * theta) - 2.0 * k
    return psi, sign * m * np.sin(m * theta) / sin_t


def cos_softmax_loss(batch: EmbeddingBatch, templates: ClassTemplates | np.ndarray,
                     cfg: LossConfig) -> LossOutput:
    if not isinstance(templates, ClassTemplates):
        templates = ClassTemplates(templates)
    y = batch.labels
    K = templates.K
    if np.any(y < 0) or np.any(y >= K):
        raise BadLabel(f"labels must lie in [0, {K})")
    if templates.W.shape[1] != batch.D:
        raise BadParams("template dimension does not match embeddings")
    N = batch.N
    unit, norms = normalize_rows(batch.data)
    wunit, wnorms = normalize_rows(templates.W)
    cos = cosine_matrix(unit, wunit)

    rows = np.arange(N)
    sim = cos.copy()
    target, dtarget = _margin_logit(cos[rows, y], cfg.softmax_variant, cfg.margin)
    sim[rows, y] = target
    logits = cfg.scale * sim
    lse = np.logaddexp.reduce(logits, axis=1)
    value = np.mean(lse - logits[rows, y])

    dS = np.exp(logits - lse[:, None])
    dS[rows, y] -= 1.0
    dS *= cfg.scale / N
    dcos = dS
    dcos[rows, y] *= dtarget  # chain through the margin on the target class

    grad_unit = dcos @ wunit
    grad_f = tangent_project(unit, grad_unit) / norms[:, None]
    grad_wunit = dcos.T @ unit
    grad_w = tangent_project(wunit, grad_wunit) / wnorms[:, None]
    return LossOutput(kind="cos_softmax", value=float(value), grad_embeddings=grad_f,
                      grad_templates=grad_w, grad_unit=grad_unit)


# ---------------------------------------------------------------------------


def compute_loss(batch: EmbeddingBatch, cfg: LossConfig, templates=None, rng_seed: int = 0) -> LossOutput:
    """Dispatch on ``cfg.kind``; the vanilla triplet loss uses every valid triplet.

    ``kind="none"`` yields a zero loss so a run can optimize a regularizer alone.
    """
    if cfg.kind == "none":
        return LossOutput(kind="none", value=0.0, grad_embeddings=np.zeros_like(batch.data))
    if cfg.kind == "triplet":
        return triplet_loss(batch, all_triplets(batch.labels), cfg)
    if cfg.kind == "semihard_triplet":
        return semihard_triplet_loss(batch, cfg, rng_seed)
    if cfg.kind == "npair":
        return npair_loss(batch, cfg)
    if cfg.kind == "multi_similarity":
        return multi_similarity_loss(batch, cfg)
    if cfg.kind == "ntxent":
        return ntxent_loss(batch, cfg)
    if templates is None:
        raise BadParams("cos_softmax loss needs class templates")
    return cos_softmax_loss(batch, templates, cfg)


def decompose_pair_gradients(loss_output: LossOutput, batch: EmbeddingBatch) -> list[PairGradient]:
    """Split dL/df into per-pair terms ``w_ij * dS_ij/df_i``."""
    if loss_output.kind == "cos_softmax" or loss_output.pair_weights is None:
        raise UnsupportedLoss(f"{loss_output.kind} is not a pair-based loss")
    unit, norms = normalize_rows(batch.data)
    cos = cosine_matrix(unit)
    w = loss_output.symmetric_weights
    kappa = loss_output.kappa
    records = []
    for i, j in np.argwhere(w != 0):
        ang = kappa / norms[i] * (-unit[j] + cos[i, j] * unit[i])
        records.append(PairGradient(pair=(int(i), int(j)), weight=float(w[i, j]),
                                    angular_grad=ang, kappa=kappa, partner_direction=unit[j].copy()))
    return records


def reconstruct_gradient(records: Sequence[PairGradient], shape: tuple[int, int]) -> np.ndarray:
    grad = np.zeros(shape)
    for r in records:
        grad[r.pair[0]] += r.weight * r.angular_grad
    return grad
