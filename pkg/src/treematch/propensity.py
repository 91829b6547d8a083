"""Propensity-score estimation and extreme-score trimming.

The score model is a main-effects logistic regression fit by iteratively
reweighted least squares with step-halving, so the log-likelihood never
decreases.  Singular normal equations (collinear one-hot columns) fall back
to the minimum-norm solve; detected separation triggers one ridge-penalized
refit so small child-node strata still yield finite, usable scores.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, TreematchError

SCORE_TOL = 1e-8
MAX_ITER = 100
RIDGE = 1e-4
# |linear predictor| beyond this means fitted probabilities are numerically
# 0/1, the signature of a diverging separation direction.
ETA_LIMIT = 30.0


@dataclass(frozen=True)
class PropensityModel:
    """Fitted logistic model: intercept-first coefficients and unit scores."""

    coefficients: np.ndarray
    scores: np.ndarray
    iterations: int
    score_norm: float
    converged: bool
    separated: bool
    loglik_path: tuple

    def __post_init__(self):
        if not np.all(np.isfinite(self.coefficients)):
            raise TreematchError("propensity coefficients are not finite")
        if self.scores.size and not (
            self.scores.min() > 0.0 and self.scores.max() < 1.0
        ):
            raise TreematchError("propensity scores must lie strictly inside (0,1)")


@dataclass(frozen=True)
class TrimResult:
    """Units kept / dropped by the extreme-score rule."""

    retained: tuple
    dropped_exposed: tuple
    dropped_control: tuple


def _sigmoid(eta):
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))


def _loglik(z, eta, ridge, beta):
    ll = float(np.sum(z * eta - np.logaddexp(0.0, eta)))
    if ridge:
        ll -= 0.5 * ridge * float(beta[1:] @ beta[1:])
    return ll


def _irls(Xi, z, ridge=0.0):
    n, p = Xi.shape
    beta = np.zeros(p)
    eta = Xi @ beta
    ll = _loglik(z, eta, ridge, beta)
    path = [ll]
    score_norm = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        prob = _sigmoid(eta)
        score = Xi.T @ (z - prob)
        if ridge:
            score[1:] -= ridge * beta[1:]
        score_norm = float(np.abs(score).max())
        if score_norm < SCORE_TOL:
            converged = True
            break
        w = np.maximum(prob * (1.0 - prob), 1e-12)
        H = (Xi * w[:, None]).T @ Xi
        if ridge:
            H[1:, 1:] += ridge * np.eye(p - 1)
        step, *_ = np.linalg.lstsq(H, score, rcond=None)
        # halve until the (penalized) log-likelihood stops decreasing
        factor = 1.0
        for _ in range(30):
            cand = beta + factor * step
            cand_eta = Xi @ cand
            cand_ll = _loglik(z, cand_eta, ridge, cand)
            if cand_ll >= ll - 1e-12:
                break
            factor *= 0.5
        beta, eta, ll = cand, cand_eta, cand_ll
        path.append(ll)
    return beta, eta, iterations, score_norm, converged, path


def fit_logistic(X: np.ndarray, z: Sequence[int]) -> PropensityModel:
    """Maximum-likelihood logistic fit of exposure on the design matrix.

    ``X`` excludes the intercept, which is added internally (coefficient 0).
    Convergence means every component of the score equation is below 1e-8 in
    absolute value.  If the fit diverges (separation), the model is refit
    with a ridge penalty of 1e-4 and flagged.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    z = np.asarray(z, dtype=float)
    if X.size and not np.all(np.isfinite(X)):
        raise TreematchError("design matrix contains non-finite values")
    if X.shape[0] != z.shape[0] and X.size:
        raise TreematchError("X row count does not match exposure vector")
    if not ((z == 0) | (z == 1)).all():
        raise DegenerateInputError("exposure vector must be 0/1")
    if z.min() == z.max():
        raise DegenerateInputError("exposure vector contains a single class")

    n = z.shape[0]
    Xi = np.column_stack([np.ones(n), X]) if X.size else np.ones((n, 1))

    beta, eta, iters, score_norm, converged, path = _irls(Xi, z, ridge=0.0)
    separated = (not converged) or float(np.abs(eta).max()) > ETA_LIMIT
    if separated:
        beta, eta, iters, score_norm, converged, path = _irls(Xi, z, ridge=RIDGE)

    scores = np.clip(_sigmoid(eta), 1e-12, 1.0 - 1e-12)
    return PropensityModel(
        coefficients=beta,
        scores=scores,
        iterations=iters,
        score_norm=score_norm,
        converged=converged,
        separated=separated,
        loglik_path=tuple(path),
    )


def trim_extremes(
    scores: Sequence[float],
    exposure: Sequence[bool],
    ids: Optional[Sequence] = None,
) -> TrimResult:
    """Drop units outside the propensity overlap region.

    Exposed units scoring above the highest control score and controls
    scoring below the lowest exposed score are removed.  Thresholds come from
    the pre-trim score sets; the rule is applied in a single pass.
    """
    scores = np.asarray(scores, dtype=float)
    exposure = np.asarray(exposure, dtype=bool)
    if ids is None:
        ids = tuple(range(scores.shape[0]))
    ids = tuple(ids)
    if not exposure.any() or exposure.all():
        raise DegenerateInputError("need at least one exposed and one control unit")

    max_control = scores[~exposure].max()
    min_exposed = scores[exposure].min()
    drop_e = exposure & (scores > max_control)
    drop_c = ~exposure & (scores < min_exposed)
    keep = ~(drop_e | drop_c)

    if not keep.any():
        warnings.warn(
            "extreme-score trimming removed every unit (no propensity overlap)",
            stacklevel=2,
        )
    elif not (exposure & keep).any() or not (~exposure & keep).any():
        warnings.warn(
            "extreme-score trimming emptied one exposure group",
            stacklevel=2,
        )
    return TrimResult(
        retained=tuple(i for i, m in zip(ids, keep) if m),
        dropped_exposed=tuple(i for i, m in zip(ids, drop_e) if m),
        dropped_control=tuple(i for i, m in zip(ids, drop_c) if m),
    )
