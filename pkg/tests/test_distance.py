"""Tests for rank transforms, the rank-based Mahalanobis distance, and the
propensity caliper penalty."""

import numpy as np
import pytest

from treematch.distance import (
    DistanceMatrix,
    apply_caliper,
    rank_mahalanobis,
    rank_transform,
)
from treematch.errors import TreematchError


# ---------------------------------------------------------------------------
# rank_transform


def test_average_rank_for_ties():
    out = rank_transform(np.array([[5.0], [5.0], [7.0]]))
    assert out[:, 0].tolist() == [1.5, 1.5, 3.0]


def test_identity_on_strictly_increasing():
    out = rank_transform(np.array([[1.0], [2.0], [3.0]]))
    assert out[:, 0].tolist() == [1.0, 2.0, 3.0]


def test_constant_column_gets_midrank():
    out = rank_transform(np.full((5, 1), 2.5))
    assert np.allclose(out[:, 0], 3.0)  # (n+1)/2 for n=5


def test_rank_transform_rejects_nan():
    with pytest.raises(TreematchError):
        rank_transform(np.array([[1.0], [np.nan]]))


# ---------------------------------------------------------------------------
# rank_mahalanobis


def test_identical_rows_have_zero_distance():
    X = np.array([[1.0, 4.0], [1.0, 4.0], [2.0, 5.0], [3.0, 6.0]])
    ranks = rank_transform(X)
    D = rank_mahalanobis(ranks, [True, False, False, True])
    # exposed row 0 vs control row 1 are identical
    assert D.values[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_hand_computed_single_covariate():
    # values (1,2,3): ranks (1,2,3), untied variance n(n+1)/12 = 1,
    # d(unit1, unit3) = (1-3)^2 / 1 = 4
    ranks = rank_transform(np.array([[1.0], [2.0], [3.0]]))
    D = rank_mahalanobis(ranks, [True, False, False])
    assert D.values[0, 1] == pytest.approx(4.0)


def test_tie_correction_rescales_diagonal():
    # column (5,5,7): ranks (1.5,1.5,3), var=0.75 rescaled to 1;
    # d(first, third) = (1.5-3)^2 / 1 = 2.25
    ranks = rank_transform(np.array([[5.0], [5.0], [7.0]]))
    D = rank_mahalanobis(ranks, [True, False, False])
    assert D.values[0, 1] == pytest.approx(2.25)


def test_symmetry_of_quadratic_form():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(8, 3))
    ranks = rank_transform(X)
    exposure = np.array([True] * 4 + [False] * 4)
    D_ab = rank_mahalanobis(ranks, exposure).values
    # swap roles: distances between the same physical units must agree
    D_ba = rank_mahalanobis(ranks, ~exposure).values
    assert np.allclose(D_ab, D_ba.T, atol=1e-10)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(10, 3))
    exposure = np.array([True] * 5 + [False] * 5)
    base = rank_mahalanobis(rank_transform(X), exposure).values
    X2 = X.copy()
    X2[:, 1] = np.exp(X2[:, 1])  # strictly monotone on one column
    X2[:, 2] = X2[:, 2] ** 3
    same = rank_mahalanobis(rank_transform(X2), exposure).values
    assert np.allclose(base, same, atol=1e-10)


def test_zero_variance_column_excluded():
    X = np.column_stack([np.arange(6.0), np.full(6, 3.0)])
    exposure = np.array([True] * 3 + [False] * 3)
    D = rank_mahalanobis(rank_transform(X), exposure)
    assert np.all(np.isfinite(D.values))


def test_requires_two_units():
    with pytest.raises(TreematchError):
        rank_mahalanobis(np.array([[1.0]]), [True])


def test_distances_nonnegative_random():
    rng = np.random.default_rng(11)
    for _ in range(10):
        X = rng.normal(size=(12, 4))
        exposure = rng.uniform(size=12) < 0.5
        if exposure.all() or not exposure.any():
            continue
        D = rank_mahalanobis(rank_transform(X), exposure)
        assert D.values.min() >= 0.0


# ---------------------------------------------------------------------------
# apply_caliper


def caliper_fixture():
    D = DistanceMatrix(
        exposed_ids=("e1", "e2"),
        control_ids=("c1", "c2"),
        values=np.array([[2.0, 3.0], [4.0, 5.0]]),
    )
    return D


def test_pair_within_caliper_unchanged():
    D = caliper_fixture()
    # score SD ~ 0.283, threshold ~ 0.057; e0-c0 gap 0.01 stays inside
    out = apply_caliper(D, [0.30, 0.80], [0.31, 0.79])
    assert out.values[0, 0] == pytest.approx(2.0)
    assert out.values[0, 1] == pytest.approx(3.0 + 1000.0)


def test_pair_outside_caliper_penalized():
    D = caliper_fixture()
    # scores: exposed (0.9, 0.88), controls (0.1, 0.89): sd ~ 0.44,
    # threshold 0.088; e1-c1 gap 0.8 -> +1000
    out = apply_caliper(D, [0.9, 0.88], [0.1, 0.89])
    assert out.values[0, 0] == pytest.approx(1002.0)
    assert out.values[0, 1] == pytest.approx(3.0)


def test_all_pairs_outside_shifts_uniformly():
    D = caliper_fixture()
    out = apply_caliper(D, [0.95, 0.96], [0.05, 0.04], width_sd=1e-6)
    assert np.allclose(out.values, D.values + 1000.0)
    assert np.all(np.isfinite(out.values))


def test_caliper_preserves_order_within_status():
    rng = np.random.default_rng(17)
    vals = rng.uniform(0, 5, size=(6, 6))
    D = DistanceMatrix(tuple(range(6)), tuple(range(6, 12)), vals)
    se, sc = rng.uniform(0.2, 0.8, 6), rng.uniform(0.2, 0.8, 6)
    out = apply_caliper(D, se, sc)
    penalized = out.values - D.values
    for status in (0.0, 1000.0):
        mask = penalized == status
        a, b = D.values[mask], out.values[mask]
        order_a = np.argsort(a, kind="stable")
        order_b = np.argsort(b, kind="stable")
        assert np.array_equal(order_a, order_b)


def test_logit_scale_option():
    D = caliper_fixture()
    out_p = apply_caliper(D, [0.6, 0.61], [0.59, 0.62], scale="probability")
    out_l = apply_caliper(D, [0.6, 0.61], [0.59, 0.62], scale="logit")
    assert out_p.values.shape == out_l.values.shape
    with pytest.raises(TreematchError):
        apply_caliper(D, [0.5, 0.5], [0.5, 0.5], scale="weird")


def test_distance_matrix_validation():
    with pytest.raises(TreematchError):
        DistanceMatrix((1,), (2,), np.array([[np.inf]]))
    with pytest.raises(TreematchError):
        DistanceMatrix((1,), (2,), np.array([[-0.5]]))
    with pytest.raises(TreematchError):
        DistanceMatrix((1, 2), (3,), np.array([[1.0]]))
