"""Rank-based Mahalanobis distances between exposed and control units,
with a soft propensity-score caliper penalty.

Covariates are replaced by within-column average ranks, which makes the
distance invariant to monotone transformations and blunts the influence of
outliers.  The covariance of the ranks gets a tie correction (every diagonal
element is rescaled to the untied-rank variance n(n+1)/12) and a pseudo-
inverse, since one-hot indicator columns are routinely collinear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import TreematchError

# Eigenvalues at or below this are treated as zero when inverting the
# tie-corrected rank covariance.
EIG_CUTOFF = 1e-10


@dataclass(frozen=True)
class DistanceMatrix:
    """Pairwise distances, exposed units on rows and controls on columns."""

    exposed_ids: tuple
    control_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.exposed_ids), len(self.control_ids)):
            raise TreematchError(
                f"distance matrix shape {vals.shape} does not match "
                f"{len(self.exposed_ids)} exposed x {len(self.control_ids)} controls"
            )
        if not np.all(np.isfinite(vals)):
            raise TreematchError("distance matrix contains non-finite entries")
        if vals.size and vals.min() < 0:
            raise TreematchError("distance matrix contains negative entries")
        object.__setattr__(self, "values", vals)

    @property
    def shape(self):
        return self.values.shape


def rank_transform(X: np.ndarray) -> np.ndarray:
    """Replace each column by ranks 1..n, ties sharing the average rank."""
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise TreematchError("rank_transform requires finite entries")
    if X.ndim != 2:
        raise TreematchError("rank_transform expects a 2-d matrix")
    return rankdata(X, axis=0, method="average")


def rank_mahalanobis(
    ranks: np.ndarray,
    exposure: Sequence[bool],
    exposed_ids: Optional[Sequence] = None,
    control_ids: Optional[Sequence] = None,
) -> DistanceMatrix:
    """Quadratic-form distance d(a,b) = (r_a - r_b)' S+ (r_a - r_b).

    ``ranks`` holds all units (exposed and control rows together) as produced
    by :func:`rank_transform`; ``exposure`` flags the exposed rows.  S is the
    rank covariance with tie-corrected diagonal, S+ its eigendecomposition
    pseudo-inverse; zero-variance columns are dropped before inverting.
    """
    ranks = np.asarray(ranks, dtype=float)
    exposure = np.asarray(exposure, dtype=bool)
    n = ranks.shape[0]
    if n < 2:
        raise TreematchError("rank_mahalanobis requires at least 2 units")
    if exposure.shape[0] != n:
        raise TreematchError("exposure vector length does not match rank matrix")

    untied_var = n * (n + 1) / 12.0
    cov = np.cov(ranks, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    diag = np.diag(cov).copy()
    keep = diag > 1e-12
    if not np.any(keep):
        # Every column constant: all units identical in rank space.
        inv = np.zeros((ranks.shape[1], ranks.shape[1]))
        kept_ranks = ranks
    else:
        kept_ranks = ranks[:, keep]
        cov = cov[np.ix_(keep, keep)]
        scale = np.sqrt(untied_var / np.diag(cov))
        cov = cov * np.outer(scale, scale)
        eigval, eigvec = np.linalg.eigh(cov)
        inv_eig = np.zeros_like(eigval)
        pos = eigval > EIG_CUTOFF
        inv_eig[pos] = 1.0 / eigval[pos]
        inv = (eigvec * inv_eig) @ eigvec.T

    re = kept_ranks[exposure]
    rc = kept_ranks[~exposure]
    qe = np.einsum("ij,jk,ik->i", re, inv, re)
    qc = np.einsum("ij,jk,ik->i", rc, inv, rc)
    cross = re @ inv @ rc.T
    d = qe[:, None] + qc[None, :] - 2.0 * cross
    d = np.maximum(d, 0.0)

    if exposed_ids is None:
        exposed_ids = tuple(np.flatnonzero(exposure))
    if control_ids is None:
        control_ids = tuple(np.flatnonzero(~exposure))
    return DistanceMatrix(tuple(exposed_ids), tuple(control_ids), d)


def apply_caliper(
    D: DistanceMatrix,
    scores_exposed: Sequence[float],
    scores_control: Sequence[float],
    width_sd: float = 0.2,
    penalty: float = 1000.0,
    scale: str = "probability",
) -> DistanceMatrix:
    """Add a flat penalty to pairs whose propensity scores are far apart.

    A pair violates the caliper when |score_e - score_c| exceeds ``width_sd``
    times the standard deviation of the scores of all retained units.  The
    penalty is additive, so matching never becomes infeasible.  ``scale``
    selects whether the comparison happens on the probability or the logit
    scale (the published recipe fixes only the 0.2 x SD width and the 1000
    penalty, not the scale).
    """
    se = np.asarray(scores_exposed, dtype=float)
    sc = np.asarray(scores_control, dtype=float)
    if se.shape[0] != len(D.exposed_ids) or sc.shape[0] != len(D.control_ids):
        raise TreematchError("score vectors do not match distance matrix dimensions")
    if scale == "logit":
        se = np.log(se / (1.0 - se))
        sc = np.log(sc / (1.0 - sc))
    elif scale != "probability":
        raise TreematchError(f"unknown caliper scale {scale!r}")
    pooled = np.concatenate([se, sc])
    sd = float(np.std(pooled, ddof=1)) if pooled.size > 1 else 0.0
    gap = np.abs(se[:, None] - sc[None, :])
    penalized = D.values + np.where(gap > width_sd * sd, penalty, 0.0)
    return DistanceMatrix(D.exposed_ids, D.control_ids, penalized)
