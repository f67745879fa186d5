import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spherelab.core import (EmbeddingBatch, batch_norm_stats, cosine_distance, l2_normalize, norm_histogram,
                            normalize_rows, normalized_euclidean, tangent_project)
from spherelab.errors import BadParams, ZeroNorm

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_l2_normalize_returns_unit_direction_and_norm():
    u = l2_normalize([3.0, 4.0])
    assert u.source_norm == 5.0
    np.testing.assert_allclose(u.direction, [0.6, 0.8])


def test_zero_vector_rejected():
    with pytest.raises(ZeroNorm):
        l2_normalize([0.0, 0.0])
    with pytest.raises(ZeroNorm):
        normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_orthogonal_vectors_have_zero_cosine_and_distance_two():
    assert cosine_distance([1, 0], [0, 2]) == pytest.approx(0.0, abs=1e-15)
    assert normalized_euclidean([1, 0], [0, 2]) == pytest.approx(2.0)
    assert normalized_euclidean([1, 0], [-5, 0]) == pytest.approx(4.0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite))
def test_two_minus_two_cos_identity(a, b):
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    assert abs(normalized_euclidean(a, b) - (2.0 - 2.0 * cosine_distance(a, b))) <= 1e-12


def test_tangent_projection_is_orthogonal_and_idempotent(rng):
    u, _ = normalize_rows(rng.standard_normal((50, 7)))
    v = rng.standard_normal((50, 7)) * 1e3
    p = tangent_project(u, v)
    assert np.max(np.abs(np.sum(p * u, axis=1)) / np.linalg.norm(p, axis=1)) < 1e-14
    np.testing.assert_allclose(tangent_project(u, p), p, atol=1e-12)


def test_batch_norm_stats_hand_values():
    stats = batch_norm_stats(EmbeddingBatch(np.array([[3.0, 0.0], [0.0, 1.0]]), [0, 1]))
    assert stats.mean == 2.0
    assert stats.variance == 1.0
    assert stats.counts.sum() == 2


def test_norm_histogram_with_identical_norms():
    counts, edges = norm_histogram(np.full(10, 1.0 + 1e-13))
    assert counts.sum() == 10 and len(edges) == 21
    stats = batch_norm_stats(np.tile([[0.6, 0.8]], (4, 1)))
    assert stats.variance == pytest.approx(0.0, abs=1e-30)


@pytest.mark.parametrize("data", [np.zeros(3), np.zeros((2, 1)), np.array([[np.nan, 1.0]])])
def test_embedding_batch_validation(data):
    with pytest.raises(BadParams):
        EmbeddingBatch(data, np.zeros(len(np.atleast_1d(data)), dtype=int))
