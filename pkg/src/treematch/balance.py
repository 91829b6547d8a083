"""Standardized differences before and after matching.

The standardized difference of covariate i is

    delta_i = (sum_exposed w_j x_ij - sum_control w_j x_ij) / s_i_pool

with s_i_pool = sqrt((s2_exposed + s2_control) / 2) taken from the
*pre-match* exposed and control samples, so the before and after columns
share a denominator.  Before matching the weights are uniform within each
group.  After matching, controls in set t carry raw weight v_j = n_t(exposed)
/ n_t(control), normalized to sum to one over matched controls, and matched
exposed units are weighted uniformly; the post-match delta is then the
average within-set difference in means weighted by the number of exposed
units per set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import TreematchError

if TYPE_CHECKING:
    from .fullmatch import FullMatch

WEAK_LOW = 0.1
FAIL_THRESHOLD = 0.2


@dataclass(frozen=True)
class BalanceTable:
    """Per-covariate balance diagnostics with threshold flags."""

    labels: tuple
    delta_before: np.ndarray
    delta_after: np.ndarray
    pooled_sd: np.ndarray
    zero_sd: np.ndarray  # columns where delta = 0 holds by convention only

    def asd_before(self) -> np.ndarray:
        return np.abs(self.delta_before)

    def asd_after(self) -> np.ndarray:
        return np.abs(self.delta_after)

    def weak_flags(self, after: bool = True) -> np.ndarray:
        asd = self.asd_after() if after else self.asd_before()
        return (asd > WEAK_LOW) & (asd < FAIL_THRESHOLD)

    def fail_flags(self, after: bool = True) -> np.ndarray:
        asd = self.asd_after() if after else self.asd_before()
        return asd >= FAIL_THRESHOLD

    def weak_count(self, after: bool = True) -> int:
        return int(self.weak_flags(after).sum())

    def max_asd(self, after: bool = True) -> float:
        asd = self.asd_after() if after else self.asd_before()
        return float(asd.max()) if asd.size else 0.0


def pooled_sd(X: np.ndarray, exposure: Sequence[bool]) -> np.ndarray:
    """Per-column sqrt of the mean of the two group variances (ddof=1)."""
    X = np.asarray(X, dtype=float)
    exposure = np.asarray(exposure, dtype=bool)
    n1, n0 = int(exposure.sum()), int((~exposure).sum())
    if n1 < 2 or n0 < 2:
        raise TreematchError(
            f"pooled_sd needs >= 2 units per group, got {n1} exposed / {n0} control"
        )
    v1 = np.var(X[exposure], axis=0, ddof=1)
    v0 = np.var(X[~exposure], axis=0, ddof=1)
    return np.sqrt(0.5 * (v1 + v0))


def match_weights(match: "FullMatch") -> dict:
    """Per-unit weights implied by the matched-set structure.

    Controls in set t get v_j = n_t(exposed) / n_t(control) normalized across
    all matched controls; matched exposed units are weighted 1 / n(exposed).
    Each group's weights sum to one.
    """
    if not match.sets:
        raise TreematchError("match contains no matched sets")
    weights: dict = {}
    raw_control = {}
    n_exposed = 0
    for s in match.sets:
        n_exposed += len(s.exposed)
        v = len(s.exposed) / len(s.controls)
        for j in s.controls:
            raw_control[j] = v
    total_v = sum(raw_control.values())
    for j, v in raw_control.items():
        weights[j] = v / total_v
    for s in match.sets:
        for e in s.exposed:
            weights[e] = 1.0 / n_exposed
    return weights


def standardized_differences(
    X: np.ndarray,
    exposure: Sequence[bool],
    weights_before: Sequence[float],
    weights_after: Sequence[float],
    labels: Sequence = None,
) -> BalanceTable:
    """Balance table over all units of a comparison.

    ``X`` holds every unit of the pre-match sample; ``weights_after`` is zero
    for units that were trimmed or left unmatched.  Each weight vector must
    sum to one within the exposed group and within the control group.
    """
    X = np.asarray(X, dtype=float)
    exposure = np.asarray(exposure, dtype=bool)
    wb = np.asarray(weights_before, dtype=float)
    wa = np.asarray(weights_after, dtype=float)
    n = X.shape[0]
    if exposure.shape[0] != n or wb.shape[0] != n or wa.shape[0] != n:
        raise TreematchError("exposure/weight vectors must match the row count of X")
    spool = pooled_sd(X, exposure)
    delta_b = weighted_delta(X, exposure, wb, spool)
    delta_a = weighted_delta(X, exposure, wa, spool)
    if labels is None:
        labels = tuple(range(X.shape[1]))
    return BalanceTable(
        labels=tuple(labels),
        delta_before=delta_b,
        delta_after=delta_a,
        pooled_sd=spool,
        zero_sd=spool == 0.0,
    )


def weighted_delta(X, exposure, weights, spool) -> np.ndarray:
    """Weighted mean difference per column, in units of the given pooled SDs.

    Columns with zero pooled SD get delta 0 by convention.
    """
    X = np.asarray(X, dtype=float)
    exposure = np.asarray(exposure, dtype=bool)
    weights = np.asarray(weights, dtype=float)
    spool = np.asarray(spool, dtype=float)
    for group in (exposure, ~exposure):
        total = weights[group].sum()
        if abs(total - 1.0) > 1e-8:
            raise TreematchError(
                f"group weights sum to {total:.6g}, expected 1 (within each group)"
            )
    diff = weights[exposure] @ X[exposure] - weights[~exposure] @ X[~exposure]
    out = np.zeros_like(diff)
    nz = spool > 0
    out[nz] = diff[nz] / spool[nz]
    return out
