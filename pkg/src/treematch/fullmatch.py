"""Optimal full matching under ratio restrictions, plus the balance-driven
choice of the restriction parameter k.

A full match partitions every retained unit into sets holding either one
exposed unit with 1..k controls or one control with 1..k exposed units.  The
minimum-total-distance partition is found exactly by a min-cost flow: each
side of the bipartite graph must keep degree between 1 and k, and any
degree-feasible subgraph prunes (without cost increase) to a disjoint union
of stars, because an edge whose endpoints both have other neighbours is
redundant.  Costs are scaled by 1e6 and rounded half-to-even to integers
before the solve; that rounding is the only deviation from real-valued
optimality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .balance import weighted_delta
from .distance import DistanceMatrix
from .errors import InfeasibleMatchError, TreematchError
from .flow import min_cost_flow

COST_SCALE = 1e6
K_MAX = 10


@dataclass(frozen=True)
class MatchedSet:
    """One star: a single hub on one side, satellites on the other."""

    exposed: tuple
    controls: tuple

    def __post_init__(self):
        if not self.exposed or not self.controls:
            raise TreematchError("matched set needs at least one unit per group")
        if len(self.exposed) > 1 and len(self.controls) > 1:
            raise TreematchError(
                "matched set must have a single exposed unit or a single control"
            )

    @property
    def size(self) -> int:
        return len(self.exposed) + len(self.controls)


@dataclass(frozen=True)
class FullMatch:
    """A complete partition of the retained units into matched sets."""

    sets: tuple
    k: int
    total_distance: float
    unmatched: tuple = ()

    def matched_exposed(self) -> list:
        return [e for s in self.sets for e in s.exposed]

    def matched_controls(self) -> list:
        return [c for s in self.sets for c in s.controls]

    def n_exposed(self) -> int:
        return sum(len(s.exposed) for s in self.sets)

    def n_controls(self) -> int:
        return sum(len(s.controls) for s in self.sets)


@dataclass(frozen=True)
class KCandidate:
    """Diagnostics for one value of the ratio restriction."""

    k: int
    feasible: bool
    weak_count: int = 0
    max_asd: float = float("nan")
    total_distance: float = float("nan")


@dataclass(frozen=True)
class MatchDiagnostics:
    """Balance summary for the selected match, with the per-k trail."""

    asd_before: np.ndarray
    asd_after: np.ndarray
    weak_count: int
    max_asd: float
    failed: bool
    candidates: tuple


def optimal_full_match(D: DistanceMatrix, k: int) -> FullMatch:
    """Minimum-total-distance full match with sets restricted to 1:k / k:1."""
    if not 1 <= k <= K_MAX:
        raise TreematchError(f"k must lie in 1..{K_MAX}, got {k}")
    n_e, n_c = D.shape
    if n_e == 0 or n_c == 0:
        raise InfeasibleMatchError("both groups must be non-empty")
    if n_e > k * n_c:
        raise InfeasibleMatchError(
            f"{n_e} exposed cannot attach to {n_c} controls with k={k}: "
            f"exposed side is binding"
        )
    if n_c > k * n_e:
        raise InfeasibleMatchError(
            f"{n_c} controls cannot attach to {n_e} exposed with k={k}: "
            f"control side is binding"
        )

    int_costs = np.rint(D.values * COST_SCALE).astype(np.int64)

    # Nodes: source, exposed, controls, sink.  Unit lower bounds (every unit
    # must be matched at least once) are folded into node imbalances.
    source = 0
    sink = n_e + n_c + 1
    exposed_node = lambda i: 1 + i
    control_node = lambda j: 1 + n_e + j

    arcs = []
    for i in range(n_e):
        arcs.append((source, exposed_node(i), k - 1, 0))
    edge_arc_start = len(arcs)
    for i in range(n_e):
        for j in range(n_c):
            arcs.append((exposed_node(i), control_node(j), 1, int(int_costs[i, j])))
    for j in range(n_c):
        arcs.append((control_node(j), sink, k - 1, 0))
    arcs.append((sink, source, n_e * k, 0))

    supply = np.zeros(n_e + n_c + 2, dtype=np.int64)
    supply[source] = -n_e
    supply[sink] = n_c
    for i in range(n_e):
        supply[exposed_node(i)] = 1
    for j in range(n_c):
        supply[control_node(j)] = -1

    feasible, _, flows = min_cost_flow(n_e + n_c + 2, arcs, supply)
    if not feasible:
        raise InfeasibleMatchError(
            f"no full match exists for {n_e} exposed x {n_c} controls with k={k}"
        )

    kept = []
    deg_e = np.zeros(n_e, dtype=int)
    deg_c = np.zeros(n_c, dtype=int)
    for i in range(n_e):
        for j in range(n_c):
            if flows[edge_arc_start + i * n_c + j] > 0:
                kept.append((i, j))
                deg_e[i] += 1
                deg_c[j] += 1

    # Zero-cost redundant edges can leave a vertex attached to two hubs;
    # strip them (never increases cost, keeps every degree >= 1).
    changed = True
    while changed:
        changed = False
        for idx, (i, j) in enumerate(kept):
            if deg_e[i] >= 2 and deg_c[j] >= 2:
                deg_e[i] -= 1
                deg_c[j] -= 1
                del kept[idx]
                changed = True
                break

    sets = _stars_from_edges(kept, deg_e, deg_c, D, k)
    total = float(sum(D.values[i, j] for i, j in kept))
    return FullMatch(sets=tuple(sets), k=k, total_distance=total)


def _stars_from_edges(kept, deg_e, deg_c, D: DistanceMatrix, k: int):
    by_exposed: dict = {}
    by_control: dict = {}
    for i, j in kept:
        by_exposed.setdefault(i, []).append(j)
        by_control.setdefault(j, []).append(i)
    if len(by_exposed) != len(D.exposed_ids) or len(by_control) != len(D.control_ids):
        raise InfeasibleMatchError("solver left a unit unmatched")  # pragma: no cover

    sets = []
    done_controls = set()
    for i in sorted(by_exposed):
        js = by_exposed[i]
        if len(js) >= 2 or all(deg_c[j] == 1 for j in js):
            # exposed hub (or a simple pair)
            sets.append(
                MatchedSet(
                    exposed=(D.exposed_ids[i],),
                    controls=tuple(D.control_ids[j] for j in sorted(js)),
                )
            )
            done_controls.update(js)
    for j in sorted(by_control):
        if j in done_controls:
            continue
        es = by_control[j]
        sets.append(
            MatchedSet(
                exposed=tuple(D.exposed_ids[i] for i in sorted(es)),
                controls=(D.control_ids[j],),
            )
        )
    for s in sets:
        if max(len(s.exposed), len(s.controls)) > k:
            raise InfeasibleMatchError("matched set exceeds the k restriction")  # pragma: no cover
    return sets


def feasible_ks(n_e: int, n_c: int, k_range: Iterable[int]) -> list:
    return [k for k in k_range if n_e <= k * n_c and n_c <= k * n_e]


def select_k(
    D: DistanceMatrix,
    X_exposed: np.ndarray,
    X_control: np.ndarray,
    pooled: np.ndarray,
    k_range: Iterable[int] = range(1, K_MAX + 1),
) -> tuple:
    """Pick the restriction k by post-match balance.

    Runs the optimal match for every feasible k, computes post-match absolute
    standardized differences against the fixed pre-match pooled SDs, and
    returns the match minimizing the number of covariates with ASD strictly
    inside (0.1, 0.2).  Matches with some ASD >= 0.2 rank behind every match
    without one; ties break toward smaller k.  If even the best match has an
    ASD >= 0.2 the diagnostics carry ``failed=True`` (the match is still
    returned for inspection).
    """
    X_exposed = np.asarray(X_exposed, dtype=float)
    X_control = np.asarray(X_control, dtype=float)
    pooled = np.asarray(pooled, dtype=float)
    n_e, n_c = D.shape
    if X_exposed.shape[0] != n_e or X_control.shape[0] != n_c:
        raise TreematchError("covariate matrices do not match distance dimensions")

    X = np.vstack([X_exposed, X_control])
    exposure = np.concatenate([np.ones(n_e, bool), np.zeros(n_c, bool)])
    unit_row = {uid: r for r, uid in enumerate(list(D.exposed_ids) + list(D.control_ids))}

    candidates = []
    best = None  # (failed, weak_count, k, match, asd_after)
    for k in sorted(set(k_range)):
        if not feasible_ks(n_e, n_c, [k]):
            candidates.append(KCandidate(k=k, feasible=False))
            continue
        match = optimal_full_match(D, k)
        weights = _weight_vector(match, unit_row, len(unit_row))
        asd_after = np.abs(weighted_delta(X, exposure, weights, pooled))
        weak = int(((asd_after > 0.1) & (asd_after < 0.2)).sum())
        max_asd = float(asd_after.max()) if asd_after.size else 0.0
        failed = max_asd >= 0.2
        candidates.append(
            KCandidate(
                k=k,
                feasible=True,
                weak_count=weak,
                max_asd=max_asd,
                total_distance=match.total_distance,
            )
        )
        key = (failed, weak, k)
        if best is None or key < best[0]:
            best = (key, match, asd_after)

    if best is None:
        raise InfeasibleMatchError(
            f"no k in {sorted(set(k_range))} admits a full match for "
            f"{n_e} exposed x {n_c} controls"
        )

    _, match, asd_after = best
    uniform = np.concatenate(
        [np.full(n_e, 1.0 / n_e), np.full(n_c, 1.0 / n_c)]
    )
    asd_before = np.abs(weighted_delta(X, exposure, uniform, pooled))
    diagnostics = MatchDiagnostics(
        asd_before=asd_before,
        asd_after=asd_after,
        weak_count=int(((asd_after > 0.1) & (asd_after < 0.2)).sum()),
        max_asd=float(asd_after.max()) if asd_after.size else 0.0,
        failed=(float(asd_after.max()) if asd_after.size else 0.0) >= 0.2,
        candidates=tuple(candidates),
    )
    return match, diagnostics


def _weight_vector(match: FullMatch, unit_row: dict, n_rows: int) -> np.ndarray:
    from .balance import match_weights

    weights = np.zeros(n_rows)
    for uid, w in match_weights(match).items():
        weights[unit_row[uid]] = w
    return weights
