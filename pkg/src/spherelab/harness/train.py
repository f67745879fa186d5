"""Training loop: sample batch, embed, metric loss + scheduled penalty, optimizer step."""

from __future__ import annotations

import logging
from dataclasses import asdict, replace

import numpy as np

from ..core import EmbeddingBatch, norm_moments
from ..errors import BadParams, DegenerateClustering, DivergenceDetected
from ..losses import ClassTemplates, compute_loss
from ..optimizers import OptimizerState, optimizer_step
from ..regularizers import RegularizerState, eta_schedule, regularizer_loss
from .data import gen_synthetic, sample_batch
from .metrics import nmi_f1, recall_at_k
from .model import build_model
from .runlog import IterRecord, MetricRecord, RunLog, SnapshotRecord

log = logging.getLogger(__name__)

NORM_LIMIT = 1e12


def row_angles(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Per-row angle between the directions of two embedding matrices."""
    u = before / np.linalg.norm(before, axis=1, keepdims=True)
    w = after / np.linalg.norm(after, axis=1, keepdims=True)
    dot = np.sum(u * w, axis=1)
    perp = np.linalg.norm(w - dot[:, None] * u, axis=1)
    return np.arctan2(perp, dot)


def _check_finite(value: float, emb: np.ndarray, it: int, runlog: RunLog):
    if not np.isfinite(value):
        raise DivergenceDetected(f"non-finite loss at iteration {it}", log=runlog)
    norms = np.linalg.norm(emb, axis=1)
    if not np.all(np.isfinite(norms)) or np.max(norms) > NORM_LIMIT:
        raise DivergenceDetected(f"embedding norm exceeded {NORM_LIMIT:g} at iteration {it}", log=runlog)


def _evaluate(emb: np.ndarray, labels: np.ndarray, K: int, ks, seed: int, it: int) -> MetricRecord:
    ks = [k for k in ks if k < len(labels)]
    recall = recall_at_k(emb, labels, ks) if ks else []
    try:
        nmi, f1 = nmi_f1(emb, labels, K, seed)
    except DegenerateClustering:
        log.warning("k-means degenerated twice at iteration %d; NMI/F1 not recorded", it)
        nmi = f1 = None
    return MetricRecord(iter=it, recall=recall, nmi=nmi, f1=f1)


def train(cfg) -> RunLog:
    """Run ``cfg.train.iterations`` steps; deterministic given ``cfg.seed``.

    ``cfg`` is a :class:`spherelab.config.RunConfig`.
    """
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dataset
    ds = gen_synthetic(d.num_classes, d.per_class, d.input_dim, d.spread, d.sigma, seed=cfg.seed)
    model = build_model(cfg.model, ds.points, rng)
    loss_cfg, reg_cfg, opt_cfg, tc = cfg.loss, cfg.regularizer, cfg.optimizer, cfg.train
    if loss_cfg.kind == "ntxent" and cfg.batch.samples_per_class != 2:
        raise BadParams("ntxent runs pair two samples of a class as views; samples_per_class must be 2")

    params = dict(model.params)
    templates = None
    if loss_cfg.kind == "cos_softmax":
        params["templates"] = rng.standard_normal((ds.K, cfg.model.embedding_dim))
    opt_states = {k: OptimizerState.zeros(v.shape, opt_cfg) for k, v in params.items()}

    reg_state = RegularizerState()
    if reg_cfg.kind == "sec" and reg_cfg.mu_mode == "ema" and reg_cfg.init_from_dataset:
        reg_state.mu = float(np.mean(np.linalg.norm(model.embed_all(ds.points), axis=1)))

    runlog = RunLog(config=cfg.to_dict() if hasattr(cfg, "to_dict") else asdict(cfg))
    T = tc.iterations
    decay_at = sorted(int(x) for x in tc.lr_decay_at)
    snap_prev = model.embed_all(ds.points) if tc.snapshot_interval else None
    snap_iter = 0

    if tc.eval_interval:
        runlog.metrics.append(_evaluate(model.embed_all(ds.points), ds.labels, ds.K,
                                        tc.recall_ks, cfg.seed, 0))

    for it in range(1, T + 1):
        idx = sample_batch(ds, cfg.batch, rng)
        mine_seed = int(rng.integers(2**31 - 1))
        emb = model.forward(idx, ds.points)
        batch = EmbeddingBatch(emb, ds.labels[idx])
        if "templates" in params:
            templates = ClassTemplates(params["templates"])
        out = compute_loss(batch, loss_cfg, templates=templates, rng_seed=mine_seed)
        eta = eta_schedule(reg_cfg, it, T)
        reg_out, reg_state = regularizer_loss(batch, reg_cfg, reg_state)
        grad_emb = out.grad_embeddings + eta * reg_out.grad_embeddings
        norm_mean, norm_var = norm_moments(emb)

        _check_finite(out.value, emb, it, runlog)

        grads = model.backward(idx, ds.points, grad_emb)
        if "templates" in params:
            grads["templates"] = out.grad_templates
        lr_scale = tc.lr_decay_factor ** sum(1 for m in decay_at if it > m)
        step_cfg = opt_cfg if lr_scale == 1.0 else replace(opt_cfg, lr=opt_cfg.lr * lr_scale)
        for name in params:
            params[name], opt_states[name] = optimizer_step(params[name], grads[name], step_cfg, opt_states[name])
            if name in model.params:
                model.params[name] = params[name]

        after = model.forward(idx, ds.points)
        dtheta = row_angles(emb, after)
        runlog.append(IterRecord(
            iter=it,
            loss=float(out.value),
            sec_loss=float(eta * reg_out.value),
            norm_mean=norm_mean,
            norm_var=norm_var,
            dtheta_mean=float(np.mean(dtheta)),
            dtheta_var=float(np.var(dtheta)),
        ))

        if tc.snapshot_interval and it % tc.snapshot_interval == 0:
            now = model.embed_all(ds.points)
            ang = row_angles(snap_prev, now)
            runlog.snapshots.append(SnapshotRecord(snap_iter, it, float(np.mean(ang)), float(np.var(ang))))
            snap_prev, snap_iter = now, it
        if tc.eval_interval and it % tc.eval_interval == 0:
            runlog.metrics.append(_evaluate(model.embed_all(ds.points), ds.labels, ds.K,
                                            tc.recall_ks, cfg.seed, it))

    runlog.final_norms = np.linalg.norm(model.embed_all(ds.points), axis=1).tolist()
    return runlog
