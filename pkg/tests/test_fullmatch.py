"""Tests for the min-cost-flow full matcher against a brute-force oracle,
plus the balance-driven selection of k."""

import itertools

import numpy as np
import pytest

from treematch.balance import pooled_sd
from treematch.distance import DistanceMatrix
from treematch.errors import InfeasibleMatchError, TreematchError
from treematch.fullmatch import FullMatch, MatchedSet, optimal_full_match, select_k


def dmat(values, prefix_e="e", prefix_c="c"):
    values = np.asarray(values, dtype=float)
    n_e, n_c = values.shape
    return DistanceMatrix(
        tuple(f"{prefix_e}{i}" for i in range(n_e)),
        tuple(f"{prefix_c}{j}" for j in range(n_c)),
        values,
    )


def brute_force_optimum(values, k):
    """Minimum cost over every edge subset forming a valid full match.

    A valid full match is an edge set where every unit has degree in [1, k]
    and every edge touches a degree-1 endpoint (disjoint stars).
    Returns None when no valid structure exists.
    """
    n_e, n_c = values.shape
    edges = [(i, j) for i in range(n_e) for j in range(n_c)]
    best = None
    for mask in range(1, 1 << len(edges)):
        chosen = [edges[b] for b in range(len(edges)) if mask >> b & 1]
        deg_e = [0] * n_e
        deg_c = [0] * n_c
        for i, j in chosen:
            deg_e[i] += 1
            deg_c[j] += 1
        if any(d < 1 or d > k for d in deg_e + deg_c):
            continue
        if any(deg_e[i] >= 2 and deg_c[j] >= 2 for i, j in chosen):
            continue
        cost = sum(values[i, j] for i, j in chosen)
        if best is None or cost < best:
            best = cost
    return best


def assert_valid_structure(match: FullMatch, D: DistanceMatrix, k: int):
    seen_e, seen_c = [], []
    for s in match.sets:
        assert len(s.exposed) == 1 or len(s.controls) == 1
        assert len(s.exposed) <= k and len(s.controls) <= k
        seen_e.extend(s.exposed)
        seen_c.extend(s.controls)
    assert sorted(seen_e) == sorted(D.exposed_ids)
    assert sorted(seen_c) == sorted(D.control_ids)
    assert len(seen_e) == len(set(seen_e))
    assert len(seen_c) == len(set(seen_c))


# ---------------------------------------------------------------------------
# optimal_full_match


def test_zero_cost_perfect_pairing():
    D = dmat([[0.0, 10.0], [10.0, 0.0]])
    match = optimal_full_match(D, k=1)
    assert match.total_distance == 0.0
    pairs = {(s.exposed[0], s.controls[0]) for s in match.sets}
    assert pairs == {("e0", "c0"), ("e1", "c1")}


def test_two_by_three_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(20):
        values = rng.integers(0, 20, size=(2, 3)).astype(float)
        D = dmat(values)
        match = optimal_full_match(D, k=2)
        assert_valid_structure(match, D, 2)
        assert match.total_distance == pytest.approx(brute_force_optimum(values, 2))


def test_one_exposed_five_controls_k3_infeasible():
    D = dmat(np.ones((1, 5)))
    with pytest.raises(InfeasibleMatchError, match="control side"):
        optimal_full_match(D, k=3)


def test_exposed_side_binding_message():
    D = dmat(np.ones((5, 1)))
    with pytest.raises(InfeasibleMatchError, match="exposed side"):
        optimal_full_match(D, k=3)


def test_flow_equals_brute_force_many_instances():
    # Core optimality check: random small instances, integer costs, exact.
    rng = np.random.default_rng(20240214)
    checked = 0
    while checked < 60:
        n_e = int(rng.integers(1, 5))
        n_c = int(rng.integers(1, 8 - n_e))
        k = int(rng.integers(1, 4))
        if n_e > k * n_c or n_c > k * n_e:
            continue
        values = rng.integers(0, 50, size=(n_e, n_c)).astype(float)
        D = dmat(values)
        match = optimal_full_match(D, k)
        assert_valid_structure(match, D, k)
        expected = brute_force_optimum(values, k)
        assert match.total_distance == pytest.approx(expected), (
            f"instance {values.tolist()} k={k}"
        )
        checked += 1


def test_real_costs_match_brute_force_within_rounding():
    rng = np.random.default_rng(99)
    for _ in range(15):
        values = rng.uniform(0, 10, size=(3, 4))
        D = dmat(values)
        match = optimal_full_match(D, k=2)
        expected = brute_force_optimum(values, 2)
        assert match.total_distance == pytest.approx(expected, rel=1e-6, abs=1e-5)


def test_total_cost_nonincreasing_in_k():
    rng = np.random.default_rng(7)
    values = rng.uniform(0, 30, size=(4, 6))
    D = dmat(values)
    costs = []
    for k in range(2, 7):
        costs.append(optimal_full_match(D, k).total_distance)
    assert all(a >= b - 1e-9 for a, b in zip(costs, costs[1:]))


def test_permutation_invariance():
    rng = np.random.default_rng(13)
    values = rng.integers(0, 40, size=(3, 5)).astype(float)
    D = dmat(values)
    base = optimal_full_match(D, k=3)

    perm_e = rng.permutation(3)
    perm_c = rng.permutation(5)
    values_p = values[np.ix_(perm_e, perm_c)]
    D_p = DistanceMatrix(
        tuple(D.exposed_ids[i] for i in perm_e),
        tuple(D.control_ids[j] for j in perm_c),
        values_p,
    )
    permuted = optimal_full_match(D_p, k=3)
    assert permuted.total_distance == pytest.approx(base.total_distance)
    assert {frozenset(s.exposed + s.controls) for s in permuted.sets} == {
        frozenset(s.exposed + s.controls) for s in base.sets
    }


def test_deterministic_output():
    rng = np.random.default_rng(3)
    values = rng.uniform(0, 5, size=(4, 7))
    D = dmat(values)
    a = optimal_full_match(D, k=3)
    b = optimal_full_match(D, k=3)
    assert a == b


def test_flow_matches_lp_oracle_on_medium_instances():
    # Independent optimality check beyond brute-force reach.  A full match
    # is a min-cost degree-constrained bipartite subgraph (degrees in
    # [1, k]); the bipartite incidence matrix is totally unimodular, so the
    # LP relaxation solved by scipy attains the integer optimum.
    from scipy.optimize import linprog
    from scipy.sparse import lil_matrix

    rng = np.random.default_rng(20240216)
    for trial in range(6):
        n_e = int(rng.integers(8, 16))
        n_c = int(rng.integers(8, 24))
        k = int(rng.integers(2, 5))
        if n_e > k * n_c or n_c > k * n_e:
            continue
        values = rng.integers(0, 200, size=(n_e, n_c)).astype(float)
        values[rng.uniform(size=values.shape) < 0.1] = 0.0  # zero-cost ties

        n_var = n_e * n_c
        A = lil_matrix((n_e + n_c, n_var))
        for i in range(n_e):
            A[i, i * n_c:(i + 1) * n_c] = 1.0
        for j in range(n_c):
            A[n_e + j, j::n_c] = 1.0
        bounds_lo = np.ones(n_e + n_c)
        bounds_hi = np.full(n_e + n_c, float(k))
        res = linprog(
            values.ravel(),
            A_ub=np.vstack([A.toarray(), -A.toarray()]),
            b_ub=np.concatenate([bounds_hi, -bounds_lo]),
            bounds=(0, 1),
            method="highs",
        )
        assert res.status == 0

        match = optimal_full_match(dmat(values), k)
        assert_valid_structure(match, dmat(values), k)
        assert match.total_distance == pytest.approx(res.fun, abs=1e-6)


def test_k_out_of_range_rejected():
    D = dmat([[1.0]])
    with pytest.raises(TreematchError):
        optimal_full_match(D, k=0)
    with pytest.raises(TreematchError):
        optimal_full_match(D, k=11)


def test_matched_set_shape_validation():
    with pytest.raises(TreematchError):
        MatchedSet(exposed=("a", "b"), controls=("c", "d"))
    with pytest.raises(TreematchError):
        MatchedSet(exposed=(), controls=("c",))


# ---------------------------------------------------------------------------
# select_k


def make_pools(rng, n_e, n_c, shift=0.0):
    X_e = rng.normal(size=(n_e, 3)) + shift
    X_c = rng.normal(size=(n_c, 3))
    X = np.vstack([X_e, X_c])
    exposure = np.array([True] * n_e + [False] * n_c)
    pooled = pooled_sd(X, exposure)
    D = DistanceMatrix(
        tuple(range(n_e)),
        tuple(range(n_e, n_e + n_c)),
        np.abs(X_e[:, :1] - X_c[:, :1].T),
    )
    return D, X_e, X_c, pooled


def test_identical_distributions_select_k1():
    rng = np.random.default_rng(0)
    X_e = rng.normal(size=(12, 3))
    X_c = X_e.copy()  # clone controls: perfect balance at k = 1
    X = np.vstack([X_e, X_c])
    exposure = np.array([True] * 12 + [False] * 12)
    pooled = pooled_sd(X, exposure)
    D = DistanceMatrix(
        tuple(range(12)),
        tuple(range(12, 24)),
        np.linalg.norm(X_e[:, None, :] - X_c[None, :, :], axis=2) ** 2,
    )
    match, diag = select_k(D, X_e, X_c, pooled, k_range=range(1, 4))
    assert match.k == 1
    assert diag.weak_count == 0
    assert not diag.failed
    assert diag.max_asd < 0.1


def test_select_k_prefers_better_balance():
    # Construct pools where k=1 is forced into bad pairs but larger k can
    # reuse the close controls.
    X_e = np.array([[0.0], [0.1], [2.0]])
    X_c = np.array([[0.05], [0.02], [5.0]])
    X = np.vstack([X_e, X_c])
    exposure = np.array([True] * 3 + [False] * 3)
    pooled = pooled_sd(X, exposure)
    D = DistanceMatrix((0, 1, 2), (3, 4, 5), np.abs(X_e - X_c.T))
    match, diag = select_k(D, X_e, X_c, pooled, k_range=range(1, 4))
    feasible = [c for c in diag.candidates if c.feasible]
    best_weak = min(c.weak_count for c in feasible if not c.max_asd >= 0.2) if any(
        c.max_asd < 0.2 for c in feasible
    ) else min(c.weak_count for c in feasible)
    assert diag.weak_count <= best_weak


def test_select_k_reports_failure_but_returns_match():
    # One covariate so imbalanced no match fixes it.
    X_e = np.full((6, 1), 10.0) + np.arange(6)[:, None] * 0.01
    X_c = np.zeros((6, 1)) + np.arange(6)[:, None] * 0.01
    X = np.vstack([X_e, X_c])
    exposure = np.array([True] * 6 + [False] * 6)
    pooled = pooled_sd(X, exposure)
    D = DistanceMatrix(
        tuple(range(6)), tuple(range(6, 12)), np.ones((6, 6))
    )
    match, diag = select_k(D, X_e, X_c, pooled, k_range=range(1, 3))
    assert diag.failed
    assert diag.max_asd >= 0.2
    assert match.sets  # still returned for inspection


def test_select_k_all_infeasible():
    D = DistanceMatrix((0,), tuple(range(1, 9)), np.ones((1, 8)))
    with pytest.raises(InfeasibleMatchError):
        select_k(D, np.zeros((1, 2)), np.zeros((8, 2)), np.ones(2), k_range=[1, 2])


def test_larger_k_fixes_weak_imbalance():
    # Deterministic instance of the selection rule: 16 exposed with three
    # ones vs 16 controls with two ones on a single binary covariate.  At
    # k=1 the surplus one must pair a zero, leaving ASD ~ 0.167 in the weak
    # band; at k=2 a 2:1 set reuses a one-control and the weighted ASD is 0.
    X_e = np.array([[1.0]] * 3 + [[0.0]] * 13)
    X_c = np.array([[1.0]] * 2 + [[0.0]] * 14)
    X = np.vstack([X_e, X_c])
    exposure = np.array([True] * 16 + [False] * 16)
    pooled = pooled_sd(X, exposure)
    D = DistanceMatrix(
        tuple(range(16)), tuple(range(16, 32)), np.abs(X_e - X_c.T)
    )
    match, diag = select_k(D, X_e, X_c, pooled, k_range=[1, 2])
    k1 = next(c for c in diag.candidates if c.k == 1)
    assert 0.1 < k1.max_asd < 0.2 and k1.weak_count == 1
    assert match.k == 2
    assert diag.weak_count == 0
    assert diag.max_asd < 1e-9


def test_ties_break_to_smaller_k():
    rng = np.random.default_rng(21)
    X_e = rng.normal(size=(8, 2))
    X_c = rng.normal(size=(8, 2))
    X = np.vstack([X_e, X_c])
    exposure = np.array([True] * 8 + [False] * 8)
    pooled = pooled_sd(X, exposure)
    D = DistanceMatrix(
        tuple(range(8)),
        tuple(range(8, 16)),
        np.linalg.norm(X_e[:, None] - X_c[None, :], axis=2),
    )
    match, diag = select_k(D, X_e, X_c, pooled, k_range=range(1, 5))
    same_quality = [
        c.k
        for c in diag.candidates
        if c.feasible
        and c.weak_count == diag.weak_count
        and (c.max_asd >= 0.2) == diag.failed
    ]
    assert match.k == min(same_quality)
