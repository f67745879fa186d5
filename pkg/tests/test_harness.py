import numpy as np
import pytest

from spherelab.config import config_from_dict
from spherelab.errors import BadParams, DivergenceDetected, Infeasible
from spherelab.harness import (BatchSpec, ModelConfig, RunLog, build_model, gen_synthetic, load_dataset_csv,
                               numeric_gradient, sample_batch, save_dataset_csv, train)
from spherelab.harness.gradcheck import finite_diff_check
from spherelab.harness.runlog import ITER_COLUMNS, IterRecord


def small_cfg(**over):
    raw = {
        "seed": 3,
        "dataset": {"num_classes": 4, "per_class": 6, "input_dim": 5},
        "model": {"embedding_dim": 4},
        "batch": {"classes_per_batch": 4, "samples_per_class": 2},
        "loss": {"kind": "triplet"},
        "regularizer": {"kind": "sec", "eta": 0.5},
        "optimizer": {"kind": "adam", "lr": 1e-2},
        "train": {"iterations": 40, "eval_interval": 20, "snapshot_interval": 20, "recall_ks": [1, 2]},
    }
    for k, v in over.items():
        raw.setdefault(k, {})
        if isinstance(v, dict):
            raw[k] = {**raw[k], **v}
        else:
            raw[k] = v
    return config_from_dict(raw)


# ----------------------------------------------------------------- data


def test_synthetic_is_deterministic_and_shaped():
    a = gen_synthetic(5, 4, 3, 2.0, 0.5, seed=9)
    b = gen_synthetic(5, 4, 3, 2.0, 0.5, seed=9)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.M == 20 and a.input_dim == 3
    np.testing.assert_array_equal(a.class_counts(), 4)


def test_zero_sigma_collapses_classes():
    ds = gen_synthetic(3, 5, 4, 2.0, 0.0, seed=0)
    for c in range(3):
        pts = ds.points[ds.labels == c]
        assert np.all(pts == pts[0])
        assert np.linalg.norm(pts[0]) == pytest.approx(2.0)


def test_synthetic_rejects_tiny_classes():
    with pytest.raises(BadParams):
        gen_synthetic(1, 5, 2, 1.0, 1.0, 0)


def test_sample_batch_cardinality(rng):
    ds = gen_synthetic(5, 4, 3, 2.0, 0.5, seed=1)
    idx = sample_batch(ds, BatchSpec(2, 3), rng)
    labs = ds.labels[idx]
    assert len(idx) == 6 and len(set(idx)) == 6
    vals, counts = np.unique(labs, return_counts=True)
    assert len(vals) == 2 and np.all(counts == 3)


def test_sample_batch_infeasible(rng):
    ds = gen_synthetic(3, 4, 3, 2.0, 0.5, seed=1)
    with pytest.raises(Infeasible):
        sample_batch(ds, BatchSpec(4, 2), rng)
    with pytest.raises(Infeasible):
        sample_batch(ds, BatchSpec(2, 5), rng)


def test_dataset_csv_round_trip(tmp_path):
    ds = gen_synthetic(3, 4, 3, 2.0, 0.5, seed=2)
    path = tmp_path / "ds.csv"
    save_dataset_csv(ds, path)
    assert path.read_text().splitlines()[0] == "id,label,x0,x1,x2"
    back = load_dataset_csv(path)
    assert back.points.tobytes() == ds.points.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)


# ----------------------------------------------------------------- models


@pytest.mark.parametrize("kind", ["free_table", "mlp"])
def test_model_backward_matches_finite_differences(kind, rng):
    ds = gen_synthetic(3, 4, 5, 2.0, 0.5, seed=4)
    model = build_model(ModelConfig(kind=kind, embedding_dim=3, hidden_dim=7), ds.points, rng)
    idx = np.array([0, 5, 5, 9])
    weights = rng.standard_normal((4, 3))
    grads = model.backward(idx, ds.points, weights)
    for name, p in model.params.items():
        def f(z, name=name):
            saved = model.params[name]
            model.params[name] = z
            val = float(np.sum(model.forward(idx, ds.points) * weights))
            model.params[name] = saved
            return val
        num = numeric_gradient(f, p.copy(), 1e-6)
        np.testing.assert_allclose(grads[name], num, atol=1e-7)


def test_free_table_rows_are_per_sample(rng):
    ds = gen_synthetic(3, 4, 5, 2.0, 0.5, seed=4)
    model = build_model(ModelConfig(embedding_dim=3), ds.points, rng)
    assert model.embed_all(ds.points).shape == (12, 3)
    np.testing.assert_array_equal(model.forward(np.array([7]), ds.points)[0], model.params["table"][7])


# ----------------------------------------------------------------- gradcheck


def test_gradcheck_quadratic_is_exact(rng):
    A = rng.standard_normal((4, 4))
    A = A @ A.T
    err = finite_diff_check(lambda x: (float(x.ravel() @ A @ x.ravel()), (2 * A @ x.ravel()).reshape(x.shape)),
                            rng.standard_normal((2, 2)), 1e-5)
    assert err < 1e-9


def test_gradcheck_rejects_large_step(rng):
    with pytest.raises(BadParams):
        finite_diff_check(lambda x: (0.0, x), np.ones(2), 1.0)


# ----------------------------------------------------------------- runlog


def test_runlog_requires_increasing_iterations():
    lg = RunLog()
    lg.append(IterRecord(1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        lg.append(IterRecord(1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0))


# ----------------------------------------------------------------- train


def test_train_logs_every_iteration():
    lg = train(small_cfg())
    assert lg.column("iter") == list(range(1, 41))
    assert lg.to_csv().splitlines()[0] == ",".join(ITER_COLUMNS)
    assert [m.iter for m in lg.metrics] == [0, 20, 40]
    assert [(s.iter_from, s.iter_to) for s in lg.snapshots] == [(0, 20), (20, 40)]
    assert all(np.isfinite(lg.column(c)).all() for c in ITER_COLUMNS)


def test_train_is_deterministic():
    a, b = train(small_cfg()), train(small_cfg())
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    c = train(small_cfg(seed=4))
    assert c.to_csv() != a.to_csv()


def test_zero_eta_matches_no_regularizer():
    a = train(small_cfg(regularizer={"kind": "sec", "eta": 0.0}))
    b = train(small_cfg(regularizer={"kind": "none", "eta": 0.0}))
    assert a.to_csv() == b.to_csv()
    assert [m.recall for m in a.metrics] == [m.recall for m in b.metrics]


def test_zero_learning_rate_leaves_embeddings_unchanged():
    cfg = small_cfg(optimizer={"kind": "sgd", "lr": 0.0})
    lg = train(cfg)
    assert max(lg.column("dtheta_mean")) < 1e-12  # angle of a vector with itself, up to rounding
    assert lg.metrics[0].recall == lg.metrics[-1].recall
    fresh = small_cfg(optimizer={"kind": "sgd", "lr": 0.0}, train={"iterations": 1})
    assert train(fresh).final_norms == lg.final_norms


def test_divergence_aborts_with_partial_log():
    cfg = small_cfg(loss={"kind": "none"}, regularizer={"kind": "l2reg", "eta": 1.0},
                    optimizer={"kind": "sgd", "lr": 1e3}, train={"iterations": 200})
    with pytest.raises(DivergenceDetected) as info:
        train(cfg)
    partial = info.value.log
    assert 0 < len(partial.records) < 200


def test_ntxent_needs_pairs_per_class():
    with pytest.raises(BadParams):
        train(small_cfg(loss={"kind": "ntxent"}, batch={"samples_per_class": 3}))


@pytest.mark.parametrize("loss", [{"kind": "cos_softmax", "softmax_variant": "arcface"}, {"kind": "npair"},
                                  {"kind": "multi_similarity"}, {"kind": "semihard_triplet"}])
def test_train_runs_every_loss(loss):
    lg = train(small_cfg(loss=loss, regularizer={"schedule": "linear_ramp"}))
    assert len(lg.records) == 40


def test_well_separated_free_table_reaches_perfect_recall():
    raw = {"seed": 0, "dataset": {"num_classes": 10, "per_class": 30, "spread": 3.0, "sigma": 0.05},
           "loss": {"kind": "triplet"}, "optimizer": {"kind": "adam", "lr": 1e-2},
           "train": {"iterations": 300, "eval_interval": 300, "snapshot_interval": 0}}
    lg = train(config_from_dict(raw))
    assert lg.metric_at(300).recall[0] == 1.0


def test_ema_dataset_init():
    lg = train(small_cfg(regularizer={"mu_mode": "ema", "rho": 0.1, "init_from_dataset": True}))
    assert len(lg.records) == 40
