"""Randomization inference within a full match using robust m-statistics.

Under the additive effect model, testing tau = tau0 subtracts tau0 from every
exposed outcome and asks whether the adjusted responses look exchangeable
within matched sets.  Each set contributes the average psi-transformed,
scaled difference between its singleton ("hub") unit and the satellites;
psi(w) = sign(w) * min(max(|w| - inner, 0), hinge - inner) is Huber's
truncated identity, and the scale is the median absolute within-set
exposed-minus-control contrast (mean fallback when the median vanishes,
floored at half the mean for lattice-valued outcomes).

Role assignments are uniformly random within each set, conditional on the
realized set structure, so the null expectation and variance of the total
statistic follow exactly by enumerating which unit holds the singleton role;
the normal mode standardizes against them, the exact mode convolves the
per-set contribution distributions and reads off the two-sided tail.
Confidence intervals and the point estimate come from inverting the test
over tau0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import CapacityError, TreematchError
from .fullmatch import FullMatch

EXACT_ENUM_LIMIT = 2**20
TIE_TOL = 1e-12


@dataclass(frozen=True)
class MStatConfig:
    """Tuning of the m-statistic; defaults are the conventional choices."""

    hinge: float = 3.0
    inner: float = 0.0
    mode: str = "normal"  # "normal" or "exact-enumeration"

    def __post_init__(self):
        if not self.hinge > self.inner >= 0.0:
            raise TreematchError(
                f"need hinge > inner >= 0, got hinge={self.hinge} inner={self.inner}"
            )
        if self.mode not in ("normal", "exact-enumeration"):
            raise TreematchError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class TestResult:
    """One node's inference output."""

    __test__ = False  # not a pytest class

    node_label: str
    tau0: float
    p_value: float
    deviate: float
    ci_lower: float
    ci_upper: float
    point_estimate: float
    level: float


class _PreparedSets:
    """Per-set outcome vectors with the observed singleton position."""

    def __init__(self, match: FullMatch, outcomes: Mapping):
        missing = [
            u
            for s in match.sets
            for u in (*s.exposed, *s.controls)
            if u not in outcomes or outcomes[u] is None
        ]
        if missing:
            raise TreematchError(f"outcomes missing for units: {missing}")
        if not match.sets:
            raise TreematchError("match contains no matched sets")
        self.sets = []
        for s in match.sets:
            one_exposed = len(s.exposed) == 1
            # hub first, satellites after, in stable id order
            hub = s.exposed[0] if one_exposed else s.controls[0]
            satellites = s.controls if one_exposed else s.exposed
            units = (hub, *satellites)
            y = np.array([float(outcomes[u]) for u in units])
            z = np.zeros(len(units), dtype=bool)
            if one_exposed:
                z[0] = True
            else:
                z[1:] = True
            self.sets.append((y, z, one_exposed))

    def assignments(self) -> int:
        total = 1
        for y, _, _ in self.sets:
            total *= y.shape[0]
        return total


def _psi(w: np.ndarray, hinge: float, inner: float) -> np.ndarray:
    mag = np.maximum(np.abs(w) - inner, 0.0)
    return np.sign(w) * np.minimum(mag, hinge - inner)


def _scale(contrasts: np.ndarray) -> float:
    """Median absolute contrast, mean fallback when the median vanishes.

    The scale is floored at half the mean absolute contrast: on lattice
    outcomes (e.g. a dichotomized response) the median collapses to |tau0|
    whenever most sets have raw contrast zero, which would freeze the
    standardized statistic over a whole range of tau0.  The floor never
    binds on continuous data, where the median exceeds half the mean.
    """
    abs_c = np.abs(contrasts)
    med = float(np.median(abs_c))
    mean = float(np.mean(abs_c))
    s = med if med > 0.0 else mean
    return max(s, 0.5 * mean)


def _set_contributions(prep: _PreparedSets, tau0: float, cfg: MStatConfig):
    """Per-set contribution vectors q (one entry per possible hub unit).

    Returns (list of q arrays, observed index per set, degenerate flag).
    The observed hub always sits at position 0 of its set.
    """
    contrasts = []
    adjusted = []
    for y, z, _ in prep.sets:
        ya = y - tau0 * z
        adjusted.append(ya)
        contrasts.append(ya[z].mean() - ya[~z].mean())
    s = _scale(np.array(contrasts))
    if s == 0.0:
        return None, None, True

    qs = []
    for (y, z, one_exposed), ya in zip(prep.sets, adjusted):
        n = ya.shape[0]
        diffs = (ya[:, None] - ya[None, :]) / s
        row_means = _psi(diffs, cfg.hinge, cfg.inner).sum(axis=1) / (n - 1)
        # Row j averages psi over "j exposed vs the rest"; with one control
        # and many exposed the singleton is the control, so flip the sign.
        qs.append(row_means if one_exposed else -row_means)
    return qs, [0] * len(qs), False


def m_test(
    match: FullMatch,
    outcomes: Mapping,
    tau0: float,
    cfg: MStatConfig = MStatConfig(),
) -> tuple:
    """Two-sided m-test of the additive null tau = tau0.

    Returns (deviate, p).  The deviate is (T - E[T]) / sqrt(Var[T]) under the
    within-set role randomization; in exact-enumeration mode the p-value is
    the exact two-sided tail Pr(|T' - E| >= |T - E|) over all role
    assignments (capacity-bounded), in normal mode 2 * (1 - Phi(|deviate|)).
    A fully tied instance (zero scale or zero variance) is declared
    degenerate: deviate 0, p 1.
    """
    prep = _PreparedSets(match, outcomes)
    return _m_test_prepared(prep, tau0, cfg)


def _m_test_prepared(prep: _PreparedSets, tau0: float, cfg: MStatConfig) -> tuple:
    qs, obs_idx, degenerate = _set_contributions(prep, tau0, cfg)
    if degenerate:
        return 0.0, 1.0

    T = sum(q[i] for q, i in zip(qs, obs_idx))
    E = sum(q.mean() for q in qs)
    V = sum(q.var() for q in qs)
    deviate = 0.0 if V <= 0.0 else (T - E) / math.sqrt(V)

    if cfg.mode == "normal":
        if V <= 0.0:
            return 0.0, 1.0
        p = min(1.0, math.erfc(abs(deviate) / math.sqrt(2.0)))
        return deviate, p

    n_assignments = prep.assignments()
    if n_assignments > EXACT_ENUM_LIMIT:
        raise CapacityError(
            f"{n_assignments} role assignments exceed the exact-mode bound "
            f"of {EXACT_ENUM_LIMIT}"
        )
    totals = np.zeros(1)
    for q in qs:
        totals = (totals[:, None] + q[None, :]).ravel()
    p = float(np.mean(np.abs(totals - E) >= abs(T - E) - TIE_TOL))
    return deviate, p


def ci_invert(
    match: FullMatch,
    outcomes: Mapping,
    level: float,
    cfg: MStatConfig = MStatConfig(),
    tol: float = 1e-6,
) -> tuple:
    """Confidence interval {tau0 : p(tau0) >= level} and point estimate.

    The point estimate is the tau0 where the deviate crosses zero; both are
    found by bisection inside a bracket grown geometrically from the range of
    observed within-set contrasts.  Endpoints are reported to 1e-4.
    """
    if not 0.0 < level < 1.0:
        raise TreematchError(f"level must be in (0,1), got {level}")
    prep = _PreparedSets(match, outcomes)

    contrasts = []
    for y, z, _ in prep.sets:
        contrasts.append(y[z].mean() - y[~z].mean())
    lo = float(min(contrasts))
    hi = float(max(contrasts))
    width = max(hi - lo, 1.0)

    def dev(t):
        return _m_test_prepared(prep, t, cfg)[0]

    def pval(t):
        return _m_test_prepared(prep, t, cfg)[1]

    lo_b, hi_b = lo - width, hi + width
    for _ in range(60):
        if dev(lo_b) > 0 and dev(hi_b) < 0:
            break
        if dev(lo_b) <= 0:
            lo_b -= width
        if dev(hi_b) >= 0:
            hi_b += width
        width *= 2.0
    else:
        raise TreematchError(
            "could not bracket the deviate zero crossing (degenerate outcomes?)"
        )

    tau_hat = _bisect(dev, lo_b, hi_b, tol)

    def p_minus_level(t):
        return pval(t) - level

    lower = _invert_side(p_minus_level, tau_hat, lo_b, tol, width, side="lower")
    upper = _invert_side(p_minus_level, tau_hat, hi_b, tol, width, side="upper")
    return round(lower, 4), round(upper, 4), tau_hat


def _bisect(f, lo, hi, tol):
    """Find the sign change of a non-increasing function: f(lo) > 0 > f(hi)."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _invert_side(g, center, outer, tol, width, side):
    """Bisect the p = level crossing between the point estimate and one end.

    ``g`` is p - level, non-negative at ``center`` and negative far out.  The
    bracket is widened once before declaring the data pathological.
    """
    end = outer
    if g(end) >= 0:
        end = end + width if side == "upper" else end - width
        if g(end) >= 0:
            raise TreematchError(
                "p-value does not fall below the level inside the widened "
                "bracket; non-monotone or degenerate data"
            )
    if side == "lower":
        lo, hi = end, center  # g(lo) < 0 <= g(hi)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if g(mid) >= 0:
                hi = mid
            else:
                lo = mid
    else:
        lo, hi = center, end  # g(lo) >= 0 > g(hi)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if g(mid) >= 0:
                lo = mid
            else:
                hi = mid
    return 0.5 * (lo + hi)


def node_pvalue_provider(
    study_context: Mapping,
    cfg: MStatConfig = MStatConfig(),
) -> Callable[[int, float, float], float]:
    """Bind per-node matches and outcomes into an ordered-testing callback.

    ``study_context`` maps node id -> (FullMatch, outcomes mapping).  The
    returned callback memoizes one m_test evaluation per node and raises for
    nodes without a prepared match (e.g. failed matching), which the driver
    surfaces as an aborted branch.
    """
    cache: dict = {}

    def provider(node_id: int, tau0: float, level: float) -> float:
        if node_id in cache:
            return cache[node_id]
        if node_id not in study_context or study_context[node_id] is None:
            raise TreematchError(f"node {node_id} has no prepared match")
        match, outcomes = study_context[node_id]
        _, p = m_test(match, outcomes, tau0, cfg)
        cache[node_id] = p
        return p

    return provider
