"""Synthetic confounded cohorts with known ground truth, and Monte Carlo
validation of the statistical guarantees (family-wise error, p-value
validity, confidence-interval coverage, balance improvement).

Participation is sampled through a chain of covariate-dependent logits that
mirrors the default hierarchy (active -> sport -> contact -> collision), so
exposure membership and outcomes share confounders.  Outcomes are additive:
a covariate baseline, plus the sum of per-node effect increments over the
nodes where the subject is exposed, plus Gaussian noise.  A node's null
hypothesis is true exactly when every subject exposed there carries zero
total shift, which the harness derives from the increments.

Replication seeds are spawned from the master seed with a counter-based
rule, so replications are independent and order-insensitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np
import yaml

from .cohort import (
    Cohort,
    CovariateEntry,
    CovariateSchema,
    Subject,
    default_classification,
    default_tree,
)
from .errors import TreematchError
from .hypotree import TestStatus
from .pipeline import StudySettings, run_matched_study

# Leaf exposure profiles of the default tree and the node labels on the
# path from the root; effect increments accumulate along these paths.
LEAF_PATHS = {
    "no-sports": ("any-activity", "no-sports"),
    "no-contact": ("any-activity", "any-sports", "no-contact"),
    "no-collision": ("any-activity", "any-sports", "any-contact", "no-collision"),
    "any-collision": ("any-activity", "any-sports", "any-contact", "any-collision"),
}

NODE_LEAVES = {
    "any-activity": tuple(LEAF_PATHS),
    "any-sports": ("no-contact", "no-collision", "any-collision"),
    "no-sports": ("no-sports",),
    "any-contact": ("no-collision", "any-collision"),
    "no-contact": ("no-contact",),
    "any-collision": ("any-collision",),
    "no-collision": ("no-collision",),
}


@dataclass(frozen=True)
class DGPCovariate:
    """One synthetic covariate: continuous, binary, or categorical."""

    name: str
    kind: str = "continuous"
    mean: float = 0.0
    sd: float = 1.0
    p: float = 0.5
    levels: tuple = ()
    probs: tuple = ()

    def __post_init__(self):
        if self.kind not in ("continuous", "binary", "categorical"):
            raise TreematchError(f"{self.name}: unknown DGP covariate kind {self.kind!r}")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise TreematchError(f"{self.name}: categorical needs >= 2 levels")


def _default_covariates():
    return (
        DGPCovariate("age", "continuous", mean=15.0, sd=1.5),
        DGPCovariate("ses", "continuous", mean=0.0, sd=1.0),
        DGPCovariate("psych", "continuous", mean=0.0, sd=1.0),
        DGPCovariate("male", "binary", p=0.5),
        DGPCovariate("urban", "binary", p=0.6),
        DGPCovariate(
            "region", "categorical",
            levels=("Northeast", "Midwest", "South", "West"),
            probs=(0.17, 0.25, 0.37, 0.21),
        ),
    )


@dataclass(frozen=True)
class SyntheticDGP:
    """Synthetic data-generating process for the default exposure hierarchy."""

    n: int = 600
    covariates: tuple = field(default_factory=_default_covariates)
    participation: Mapping = field(
        default_factory=lambda: {
            "active": 0.6,
            "sport": 0.4,
            "contact": 0.5,
            "collision": -0.3,
            "extra_nonsport": -1.2,
        }
    )
    confounding: Mapping = field(
        default_factory=lambda: {"age": 0.3, "ses": 0.5, "male": 0.4}
    )
    outcome_coefs: Mapping = field(
        default_factory=lambda: {"age": 0.2, "ses": 0.6, "male": -0.3}
    )
    outcome_intercept: float = 0.0
    effects: Mapping = field(default_factory=dict)  # node label -> increment
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise TreematchError("cohort size must be at least 2")
        names = {c.name for c in self.covariates}
        for coefs in (self.confounding, self.outcome_coefs):
            unknown = set(coefs) - names
            if unknown:
                raise TreematchError(f"coefficients reference unknown covariates {sorted(unknown)}")
        unknown_nodes = set(self.effects) - set(NODE_LEAVES)
        if unknown_nodes:
            raise TreematchError(f"effects reference unknown node labels {sorted(unknown_nodes)}")

    def schema(self) -> CovariateSchema:
        entries = []
        for c in self.covariates:
            if c.kind == "categorical":
                entries.append(CovariateEntry(c.name, "categorical", levels=c.levels))
            else:
                entries.append(CovariateEntry(c.name, "continuous"))
        return CovariateSchema(tuple(entries))


def load_dgp(path) -> SyntheticDGP:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    covs = tuple(
        DGPCovariate(
            name=str(c["name"]),
            kind=str(c.get("kind", "continuous")),
            mean=float(c.get("mean", 0.0)),
            sd=float(c.get("sd", 1.0)),
            p=float(c.get("p", 0.5)),
            levels=tuple(c.get("levels", ())),
            probs=tuple(c.get("probs", ())),
        )
        for c in raw.get("covariates", [])
    ) or _default_covariates()
    return SyntheticDGP(
        n=int(raw.get("n", 600)),
        covariates=covs,
        participation=dict(raw.get("participation", SyntheticDGP().participation)),
        confounding=dict(raw.get("confounding", SyntheticDGP().confounding)),
        outcome_coefs=dict(raw.get("outcome_coefs", SyntheticDGP().outcome_coefs)),
        outcome_intercept=float(raw.get("outcome_intercept", 0.0)),
        effects=dict(raw.get("effects", {})),
        noise_sd=float(raw.get("noise_sd", 1.0)),
        seed=int(raw.get("seed", 0)),
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _covariate_scores(dgp: SyntheticDGP, values: dict) -> dict:
    """Centered numeric embedding per covariate, used by the linear indices."""
    scores = {}
    for c in dgp.covariates:
        v = values[c.name]
        if c.kind == "continuous":
            scores[c.name] = (v - c.mean) / c.sd
        elif c.kind == "binary":
            scores[c.name] = v - c.p
        else:
            idx = np.array([c.levels.index(level) for level in v], dtype=float)
            scores[c.name] = idx / (len(c.levels) - 1) - 0.5
    return scores


def node_truth(dgp: SyntheticDGP) -> dict:
    """Per node label: (null_is_true, common_effect_or_None).

    The effect of a node's exposure group versus controls is the increment
    sum along each leaf profile passing through the node; the null is true
    iff every such sum is zero, and the common effect is defined only when
    all sums agree.
    """
    shifts = {
        leaf: sum(dgp.effects.get(lbl, 0.0) for lbl in path)
        for leaf, path in LEAF_PATHS.items()
    }
    out = {}
    for label, leaves in NODE_LEAVES.items():
        vals = [shifts[leaf] for leaf in leaves]
        is_null = all(v == 0.0 for v in vals)
        common = vals[0] if all(v == vals[0] for v in vals) else None
        out[label] = (is_null, common)
    return out


def generate_cohort(dgp: SyntheticDGP, seed: Optional[object] = None) -> Cohort:
    """Draw one synthetic cohort; deterministic given (dgp, seed)."""
    rng = np.random.default_rng(dgp.seed if seed is None else seed)
    cls = default_classification()
    collision = sorted(cls.collision)
    contact = sorted(cls.contact)
    non_contact = sorted(cls.non_contact)
    non_sport = sorted(cls.non_sport)

    values = {}
    for c in dgp.covariates:
        if c.kind == "continuous":
            values[c.name] = rng.normal(c.mean, c.sd, size=dgp.n)
        elif c.kind == "binary":
            values[c.name] = (rng.uniform(size=dgp.n) < c.p).astype(float)
        else:
            probs = np.array(c.probs, dtype=float) if c.probs else None
            if probs is not None:
                probs = probs / probs.sum()
            values[c.name] = rng.choice(list(c.levels), size=dgp.n, p=probs)

    scores = _covariate_scores(dgp, values)
    u_part = np.zeros(dgp.n)
    for name, coef in dgp.confounding.items():
        u_part = u_part + coef * scores[name]
    u_out = np.zeros(dgp.n)
    for name, coef in dgp.outcome_coefs.items():
        u_out = u_out + coef * scores[name]

    p = dgp.participation
    draws = rng.uniform(size=(dgp.n, 5))
    pick = rng.uniform(size=(dgp.n, 4))  # activity-name selection
    noise = rng.normal(size=dgp.n)

    subjects = []
    shifts = {
        leaf: sum(dgp.effects.get(lbl, 0.0) for lbl in path)
        for leaf, path in LEAF_PATHS.items()
    }

    def choose(pool, r, extra_chance):
        first = pool[int(r * len(pool)) % len(pool)]
        acts = {first}
        if extra_chance < 0.3 and len(pool) > 1:
            acts.add(pool[(int(r * len(pool)) + 1) % len(pool)])
        return acts

    for j in range(dgp.n):
        activities: set = set()
        shift = 0.0
        if draws[j, 0] < _sigmoid(p["active"] + u_part[j]):
            if draws[j, 1] < _sigmoid(p["sport"] + u_part[j]):
                if draws[j, 2] < _sigmoid(p["contact"] + u_part[j]):
                    if draws[j, 3] < _sigmoid(p["collision"] + u_part[j]):
                        activities |= choose(collision, pick[j, 0], pick[j, 1])
                        shift = shifts["any-collision"]
                    else:
                        activities |= choose(contact, pick[j, 0], pick[j, 1])
                        shift = shifts["no-collision"]
                else:
                    activities |= choose(non_contact, pick[j, 0], pick[j, 1])
                    shift = shifts["no-contact"]
                if draws[j, 4] < _sigmoid(p["extra_nonsport"]):
                    activities.add(non_sport[int(pick[j, 2] * len(non_sport)) % len(non_sport)])
            else:
                activities |= choose(non_sport, pick[j, 3], 1.0)
                shift = shifts["no-sports"]

        y = dgp.outcome_intercept + u_out[j] + shift + dgp.noise_sd * noise[j]
        covariates = {
            c.name: (
                str(values[c.name][j]) if c.kind == "categorical" else float(values[c.name][j])
            )
            for c in dgp.covariates
        }
        subjects.append(
            Subject(
                id=f"u{j:05d}",
                covariates=covariates,
                activities=frozenset(activities),
                outcomes={"y": float(y)},
            )
        )
    return Cohort(subjects, dgp.schema(), outcome_names=("y",))


@dataclass
class MonteCarloSummary:
    """Aggregate of repeated study runs on synthetic cohorts."""

    replications: int
    completed: int
    errors: int
    fwer: float
    fwer_se: float
    rejection_rate: dict
    tested_count: dict
    coverage: dict
    mean_max_asd_before: float
    mean_max_asd_after: float
    true_nulls: dict
    effects: dict
    seed: int


def _replication_seed(master_seed: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(rep,))


def _run_replications(dgp, settings, reps, master_seed, need_ci):
    tree = default_tree()
    cls = default_classification()
    truths = node_truth(dgp)
    labels = {n.id: n.label for n in tree.nodes}

    rej = {lbl: 0 for lbl in labels.values()}
    tested = {lbl: 0 for lbl in labels.values()}
    covered = {lbl: 0 for lbl in labels.values()}
    ci_evaluable = {lbl: 0 for lbl in labels.values()}
    fwer_events = 0
    errors = 0
    completed = 0
    max_before = []
    max_after = []

    run_settings = replace(settings, compute_ci=need_ci)

    for rep in range(reps):
        cohort = generate_cohort(dgp, seed=_replication_seed(master_seed, rep))
        try:
            report = run_matched_study(
                cohort, tree, cls, run_settings, outcome_roles={"y": "co-primary"}
            )
        except TreematchError:
            errors += 1
            continue
        completed += 1
        decision = report.decisions["y"]
        any_true_null_rejected = False
        for node_id, lbl in labels.items():
            status = decision.status[node_id]
            if status is not TestStatus.NOT_TESTED:
                tested[lbl] += 1
            if status is TestStatus.REJECTED:
                rej[lbl] += 1
                if truths[lbl][0]:
                    any_true_null_rejected = True
            if need_ci and status is not TestStatus.NOT_TESTED:
                outcome = report.outcomes["y"][node_id]
                effect = truths[lbl][1]
                if outcome.result is not None and effect is not None:
                    lo, hi = outcome.result.ci_lower, outcome.result.ci_upper
                    if not (np.isnan(lo) or np.isnan(hi)):
                        ci_evaluable[lbl] += 1
                        if lo <= effect <= hi:
                            covered[lbl] += 1
        if any_true_null_rejected:
            fwer_events += 1
        asd_b = [
            nr.balance.max_asd(after=False)
            for nr in report.nodes.values()
            if nr.balance is not None
        ]
        asd_a = [
            nr.diagnostics.max_asd
            for nr in report.nodes.values()
            if nr.diagnostics is not None
        ]
        if asd_b:
            max_before.append(max(asd_b))
        if asd_a:
            max_after.append(max(asd_a))

    fwer = fwer_events / completed if completed else float("nan")
    fwer_se = (
        float(np.sqrt(fwer * (1 - fwer) / completed)) if completed else float("nan")
    )
    return MonteCarloSummary(
        replications=reps,
        completed=completed,
        errors=errors,
        fwer=fwer,
        fwer_se=fwer_se,
        rejection_rate={
            lbl: (rej[lbl] / completed if completed else float("nan"))
            for lbl in rej
        },
        tested_count=dict(tested),
        coverage={
            lbl: (covered[lbl] / ci_evaluable[lbl]) if ci_evaluable[lbl] else None
            for lbl in covered
        },
        mean_max_asd_before=float(np.mean(max_before)) if max_before else float("nan"),
        mean_max_asd_after=float(np.mean(max_after)) if max_after else float("nan"),
        true_nulls={lbl: truths[lbl][0] for lbl in truths},
        effects={lbl: truths[lbl][1] for lbl in truths},
        seed=master_seed,
    )


def estimate_fwer(
    dgp: SyntheticDGP,
    settings: StudySettings = StudySettings(),
    reps: int = 2000,
    master_seed: int = 0,
) -> MonteCarloSummary:
    """Empirical family-wise error rate over repeated studies.

    FWER is the fraction of completed replications rejecting at least one
    true null; the binomial standard error rides along.  Replication
    failures are counted, not fatal.
    """
    if reps < 100:
        raise TreematchError("need at least 100 replications")
    return _run_replications(dgp, settings, reps, master_seed, need_ci=False)


def estimate_coverage(
    dgp: SyntheticDGP,
    settings: StudySettings = StudySettings(),
    reps: int = 1000,
    master_seed: int = 0,
) -> MonteCarloSummary:
    """Per-node CI coverage of the true effect, conditional on being tested."""
    if reps < 100:
        raise TreematchError("need at least 100 replications")
    return _run_replications(dgp, settings, reps, master_seed, need_ci=True)
