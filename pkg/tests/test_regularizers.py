import numpy as np
import pytest

from spherelab.core import EmbeddingBatch
from spherelab.errors import BadParams, BadSchedule, ZeroNorm
from spherelab.harness.gradcheck import numeric_gradient
from spherelab.losses import LossConfig, compute_loss
from spherelab.regularizers import (RegularizerConfig, RegularizerState, eta_schedule, l2_reg_loss,
                                    regularizer_loss, sec_loss)

SEC = RegularizerConfig(kind="sec", eta=1.0)


def rows(*vecs):
    x = np.array(vecs, dtype=float)
    return EmbeddingBatch(x, np.arange(len(x)))


def test_sec_hand_example():
    b = rows([3.0, 0.0], [0.0, 1.0])
    out, state = sec_loss(b, SEC, RegularizerState())
    assert state.mu == 2.0
    assert out.value == 1.0
    np.testing.assert_allclose(out.grad_embeddings, [[1.0, 0.0], [0.0, -1.0]])


def test_sec_zero_on_sphere(rng):
    x = rng.standard_normal((6, 4))
    x *= 1.7 / np.linalg.norm(x, axis=1, keepdims=True)
    out, _ = sec_loss(EmbeddingBatch(x, np.arange(6)), SEC)
    assert out.value == pytest.approx(0.0, abs=1e-28)
    assert np.max(np.abs(out.grad_embeddings)) < 1e-14


def test_sec_zero_row_raises():
    with pytest.raises(ZeroNorm):
        sec_loss(rows([0.0, 0.0], [1.0, 0.0]), SEC)


def test_sec_fixed_zero_equals_l2(rng):
    b = EmbeddingBatch(rng.standard_normal((8, 5)), np.arange(8))
    sec, _ = sec_loss(b, RegularizerConfig(kind="sec", mu_mode="fixed", mu_value=0.0))
    l2 = l2_reg_loss(b)
    assert abs(sec.value - l2.value) <= 1e-12
    assert np.max(np.abs(sec.grad_embeddings - l2.grad_embeddings)) <= 1e-12


def test_l2_hand_examples():
    out = l2_reg_loss(rows([3.0, 4.0]))
    assert out.value == 25.0
    np.testing.assert_array_equal(out.grad_embeddings, [[6.0, 8.0]])
    unit = l2_reg_loss(rows([1.0, 0.0], [0.0, 1.0], [0.6, 0.8]))
    assert unit.value == pytest.approx(1.0)
    z = l2_reg_loss(rows([0.0, 0.0], [1.0, 0.0]))
    assert z.value == 0.5 and not np.any(z.grad_embeddings[0])


def test_ema_recurrence_and_first_batch_seed(rng):
    cfg = RegularizerConfig(kind="sec", mu_mode="ema", rho=0.1)
    b1 = EmbeddingBatch(rng.standard_normal((5, 3)), np.arange(5))
    b2 = EmbeddingBatch(3 * rng.standard_normal((5, 3)), np.arange(5))
    _, s1 = sec_loss(b1, cfg, RegularizerState())
    m1 = np.mean(np.linalg.norm(b1.data, axis=1))
    assert s1.mu == pytest.approx(m1)
    _, s2 = sec_loss(b2, cfg, s1)
    assert s2.mu == pytest.approx(0.9 * m1 + 0.1 * np.mean(np.linalg.norm(b2.data, axis=1)))
    assert s2.t == 2


def test_ema_rho_one_is_batch_mean(rng):
    state = RegularizerState(mu=123.0)
    for _ in range(5):
        b = EmbeddingBatch(rng.standard_normal((6, 4)) * rng.uniform(0.1, 5), np.arange(6))
        ema, state = sec_loss(b, RegularizerConfig(kind="sec", mu_mode="ema", rho=1.0), state)
        bm, bstate = sec_loss(b, SEC)
        assert state.mu == bstate.mu
        assert ema.value == bm.value
        np.testing.assert_array_equal(ema.grad_embeddings, bm.grad_embeddings)


def test_sec_gradient_is_radial_and_balanced(rng):
    for _ in range(50):
        x = rng.standard_normal((7, 5)) * rng.uniform(0.1, 3, size=(7, 1))
        out, st = sec_loss(EmbeddingBatch(x, np.arange(7)), SEC)
        g = out.grad_embeddings
        u = x / np.linalg.norm(x, axis=1, keepdims=True)
        rej = g - np.sum(g * u, axis=1, keepdims=True) * u
        assert np.all(np.linalg.norm(rej, axis=1) <= 1e-12 * np.maximum(np.linalg.norm(g, axis=1), 1e-300))
        assert abs(np.sum(np.linalg.norm(x, axis=1) - st.mu)) < 1e-10


def test_small_sec_step_reduces_norm_variance(rng):
    for _ in range(100):
        x = rng.standard_normal((8, 5)) * rng.uniform(0.2, 3, size=(8, 1))
        out, _ = sec_loss(EmbeddingBatch(x, np.arange(8)), SEC)
        after = x - 1e-2 * out.grad_embeddings
        assert np.var(np.linalg.norm(after, axis=1)) < np.var(np.linalg.norm(x, axis=1))


def test_combined_objective_gradient_is_sum(rng):
    b = EmbeddingBatch(rng.standard_normal((6, 5)), np.repeat(np.arange(3), 2))
    metric = compute_loss(b, LossConfig("npair"))
    reg, _ = sec_loss(b, SEC)
    eta = 0.37
    combined = metric.grad_embeddings + eta * reg.grad_embeddings

    def total(z):
        bz = b.with_data(z)
        return compute_loss(bz, LossConfig("npair")).value + eta * sec_loss(bz, SEC)[0].value
    num = numeric_gradient(total, b.data, 1e-6)
    assert np.linalg.norm(num - combined) / np.linalg.norm(combined) < 1e-7


def test_none_regularizer_is_zero(rng):
    b = EmbeddingBatch(rng.standard_normal((4, 3)), np.arange(4))
    out, st = regularizer_loss(b, RegularizerConfig(), RegularizerState())
    assert out.value == 0.0 and not np.any(out.grad_embeddings) and st.t == 1


@pytest.mark.parametrize("kw", [dict(eta=-1.0), dict(rho=1.5), dict(kind="sec", mu_mode="fixed", mu_value=-1.0),
                                dict(kind="bogus"), dict(schedule="cosine")])
def test_config_validation(kw):
    with pytest.raises(BadParams):
        RegularizerConfig(**kw)


def test_schedules():
    cfg = lambda **kw: RegularizerConfig(kind="sec", eta=1.0, **kw)
    assert eta_schedule(cfg(), 17, 100) == 1.0
    assert eta_schedule(cfg(schedule="linear_ramp"), 100, 100) == 1.0
    assert eta_schedule(cfg(schedule="linear_ramp"), 25, 100) == 0.25
    assert eta_schedule(cfg(schedule="capped_ramp"), 20, 10000) == 1.0
    assert eta_schedule(cfg(schedule="capped_ramp"), 10, 10000) == 0.5
    assert eta_schedule(cfg(schedule="capped_ramp"), 5000, 10000) == 1.0
    w = cfg(schedule="warmup_epochs", start_epoch=3, num_epochs=16)
    assert eta_schedule(w, 299, 1600) == 0.0
    assert eta_schedule(w, 350, 1600) == 0.5
    assert eta_schedule(w, 400, 1600) == 1.0
    assert eta_schedule(w, 1600, 1600) == 1.0
    with pytest.raises(BadSchedule):
        eta_schedule(cfg(), 0, 0)
    with pytest.raises(BadSchedule):
        eta_schedule(cfg(), 11, 10)
