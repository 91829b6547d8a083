"""End-to-end study driver: per-node propensity fit, trimming, matching and
balance checks in breadth-first tree order with carryover exclusions, then
level allocation and gated testing per outcome, emitted as a deterministic
report.

Carryover follows the sequential protocol: a node's exposed pool is the
parent's matched exposed units whose membership at the node is defined, the
control pool is the parent's matched controls (a flag switches to the full
no-activity pool), and any unit trimmed anywhere is excluded from every
later node.  A failed match (some post-match ASD >= 0.2, an empty pool, or
an infeasible restriction) blocks testing of that node and its descendants;
the report still carries every row.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np
import yaml

from .balance import BalanceTable, match_weights, pooled_sd, standardized_differences
from .cohort import (
    Cohort,
    CovariateSchema,
    OutcomeSpec,
    SportClassification,
    assign_exposures,
    default_classification,
    default_tree,
    encode_design_matrix,
    load_classification,
    load_cohort,
)
from .distance import apply_caliper, rank_mahalanobis, rank_transform
from .errors import InfeasibleMatchError, TreematchError
from .fullmatch import FullMatch, MatchDiagnostics, select_k
from .hypotree import (
    AlphaAllocation,
    ExposureTree,
    TestStatus,
    allocate_alpha,
    derive_constraints,
    load_tree,
    run_ordered_testing,
)
from .inference import MStatConfig, TestResult, ci_invert, m_test
from .propensity import fit_logistic, trim_extremes


@dataclass(frozen=True)
class StudySettings:
    """Protocol knobs shared by every node."""

    alpha: float = 0.05
    k_range: tuple = tuple(range(1, 11))
    caliper_width: float = 0.2
    caliper_penalty: float = 1000.0
    caliper_scale: str = "probability"
    mstat: MStatConfig = field(default_factory=MStatConfig)
    control_pool: str = "parent-matched"  # or "full"
    alpha_policy: str = "k-plus-one"
    compute_ci: bool = True  # skip interval inversion when only p-values matter
    dump_distances: Optional[str] = None  # directory for per-node distance TSVs

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise TreematchError(f"alpha must be in [0,1), got {self.alpha}")
        if not set(self.k_range) <= set(range(1, 11)):
            raise TreematchError("k range must be a subset of 1..10")
        if self.control_pool not in ("parent-matched", "full"):
            raise TreematchError(f"unknown control pool rule {self.control_pool!r}")


@dataclass(frozen=True)
class StudyConfig:
    """A full study: data locations plus settings."""

    cohort_path: str
    schema: CovariateSchema
    outcomes: tuple
    tree_path: Optional[str] = None
    classification_path: Optional[str] = None
    settings: StudySettings = field(default_factory=StudySettings)
    delimiter: str = ","
    seed: int = 0


@dataclass
class NodeFlow:
    """Sample counts in the published three-block layout."""

    label: str
    before_exposed: int = 0
    before_controls: int = 0
    dropped_exposed: int = 0
    dropped_controls: int = 0
    after_exposed: int = 0
    after_controls: int = 0

    def row(self):
        return (
            self.before_exposed, self.before_controls,
            self.before_exposed + self.before_controls,
            self.dropped_exposed, self.dropped_controls,
            self.dropped_exposed + self.dropped_controls,
            self.after_exposed, self.after_controls,
            self.after_exposed + self.after_controls,
        )


@dataclass
class NodeOutcome:
    """Inference output for one (node, outcome) pair."""

    result: Optional[TestResult]
    status: TestStatus
    role: str
    sets_used: int = 0
    note: str = ""


@dataclass
class NodeReport:
    node_id: int
    label: str
    flow: NodeFlow
    failed: bool
    failure_reason: str = ""
    k: Optional[int] = None
    match: Optional[FullMatch] = None
    diagnostics: Optional[MatchDiagnostics] = None
    balance: Optional[BalanceTable] = None


@dataclass
class StudyReport:
    tree_labels: dict
    allocation: AlphaAllocation
    nodes: dict  # node_id -> NodeReport
    outcomes: dict  # outcome name -> {node_id -> NodeOutcome}
    decisions: dict  # co-primary outcome name -> TestDecision
    outcome_roles: dict
    seed: int
    n_subjects: int
    column_labels: tuple


def load_study_config(path) -> StudyConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(base, p)

    cohort_cfg = raw.get("cohort", {})
    settings_cfg = dict(raw.get("settings", {}))
    mstat_cfg = settings_cfg.pop("mstat", {})
    caliper_cfg = settings_cfg.pop("caliper", {})
    k_cfg = settings_cfg.pop("k_range", None)
    settings = StudySettings(
        alpha=float(settings_cfg.pop("alpha", 0.05)),
        k_range=tuple(
            range(int(k_cfg[0]), int(k_cfg[1]) + 1)
        ) if isinstance(k_cfg, (list, tuple)) and len(k_cfg) == 2 else (
            tuple(int(k) for k in k_cfg) if k_cfg else tuple(range(1, 11))
        ),
        caliper_width=float(caliper_cfg.get("width", 0.2)),
        caliper_penalty=float(caliper_cfg.get("penalty", 1000.0)),
        caliper_scale=str(caliper_cfg.get("scale", "probability")),
        mstat=MStatConfig(
            hinge=float(mstat_cfg.get("hinge", 3.0)),
            inner=float(mstat_cfg.get("inner", 0.0)),
            mode=str(mstat_cfg.get("mode", "normal")),
        ),
        control_pool=str(settings_cfg.pop("control_pool", "parent-matched")),
        alpha_policy=str(settings_cfg.pop("alpha_policy", "k-plus-one")),
    )
    outcomes = tuple(
        OutcomeSpec(
            name=str(o["name"]),
            construct=str(o.get("construct", "identity")),
            sources=tuple(o.get("sources", [o.get("source")] if o.get("source") else ())),
            role=str(o.get("role", "co-primary")),
        )
        for o in raw.get("outcomes", [])
    )
    return StudyConfig(
        cohort_path=resolve(cohort_cfg.get("path")),
        schema=CovariateSchema.from_config(raw.get("covariates", [])),
        outcomes=outcomes,
        tree_path=resolve(raw.get("tree")),
        classification_path=resolve(raw.get("classification")),
        settings=settings,
        delimiter=str(cohort_cfg.get("delimiter", ",")),
        seed=int(raw.get("seed", 0)),
    )


def run_study(cfg: StudyConfig, cohort: Optional[Cohort] = None) -> StudyReport:
    """Load inputs per the config and run the matched study end to end.

    Subjects lacking any co-primary outcome are excluded up front (the
    study inclusion rule); secondary outcomes may be missing and are then
    analyzed on the complete matched sets only.
    """
    tree = load_tree(cfg.tree_path) if cfg.tree_path else default_tree()
    cls = (
        load_classification(cfg.classification_path)
        if cfg.classification_path
        else default_classification()
    )
    if cohort is None:
        cohort = load_cohort(cfg.cohort_path, cfg.schema, cfg.outcomes, cfg.delimiter)
    co_primary = [o.name for o in cfg.outcomes if o.role == "co-primary"]
    cohort = cohort.filter_complete(co_primary)
    roles = {o.name: o.role for o in cfg.outcomes}
    return run_matched_study(
        cohort, tree, cls, cfg.settings, outcome_roles=roles, seed=cfg.seed
    )


def run_matched_study(
    cohort: Cohort,
    tree: ExposureTree,
    cls: SportClassification,
    settings: StudySettings = StudySettings(),
    outcome_roles: Optional[Mapping] = None,
    seed: int = 0,
) -> StudyReport:
    """Core protocol on in-memory objects."""
    if outcome_roles is None:
        outcome_roles = {name: "co-primary" for name in cohort.outcome_names}
    X, labels = encode_design_matrix(cohort)
    row_of = {sid: r for r, sid in enumerate(cohort.ids())}
    assignment = assign_exposures(cohort, tree, cls)
    full_controls = assignment.control_ids()

    nodes: dict = {}
    matched_exposed: dict = {}
    matched_controls: dict = {}
    excluded: set = set()

    for node_id in tree.breadth_first():
        node = tree.node(node_id)
        flow = NodeFlow(label=node.label)
        report = NodeReport(node_id=node_id, label=node.label, flow=flow, failed=False)
        nodes[node_id] = report

        if node.parent is None:
            exposed_pool = [u for u in assignment.exposed_ids(node_id) if u not in excluded]
            control_pool = [u for u in full_controls if u not in excluded]
        else:
            if nodes[node.parent].failed:
                report.failed = True
                report.failure_reason = "parent branch failed"
                continue
            parent_exposed = matched_exposed[node.parent]
            exposed_pool = [
                u
                for u in parent_exposed
                if u not in excluded and assignment.status(u, node_id) == "exposed"
            ]
            if settings.control_pool == "parent-matched":
                control_pool = [
                    u for u in matched_controls[node.parent] if u not in excluded
                ]
            else:
                control_pool = [u for u in full_controls if u not in excluded]

        flow.before_exposed = len(exposed_pool)
        flow.before_controls = len(control_pool)
        if len(exposed_pool) < 2 or len(control_pool) < 2:
            report.failed = True
            report.failure_reason = "empty or near-empty pool before matching"
            continue

        pool_ids = exposed_pool + control_pool
        pool_rows = [row_of[u] for u in pool_ids]
        Xp = X[pool_rows]
        zp = np.array([True] * len(exposed_pool) + [False] * len(control_pool))
        spool = pooled_sd(Xp, zp)

        model = fit_logistic(Xp, zp.astype(float))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            trim = trim_extremes(model.scores, zp, ids=pool_ids)
        flow.dropped_exposed = len(trim.dropped_exposed)
        flow.dropped_controls = len(trim.dropped_control)
        excluded.update(trim.dropped_exposed)
        excluded.update(trim.dropped_control)

        retained = set(trim.retained)
        kept_e = [u for u in exposed_pool if u in retained]
        kept_c = [u for u in control_pool if u in retained]
        if not kept_e or not kept_c:
            report.failed = True
            report.failure_reason = "no propensity overlap after trimming"
            continue

        score_of = dict(zip(pool_ids, model.scores))
        kept_rows_e = [row_of[u] for u in kept_e]
        kept_rows_c = [row_of[u] for u in kept_c]
        X_e, X_c = X[kept_rows_e], X[kept_rows_c]
        ranks = rank_transform(np.vstack([X_e, X_c]))
        z_kept = np.array([True] * len(kept_e) + [False] * len(kept_c))
        D = rank_mahalanobis(ranks, z_kept, exposed_ids=kept_e, control_ids=kept_c)
        D = apply_caliper(
            D,
            [score_of[u] for u in kept_e],
            [score_of[u] for u in kept_c],
            width_sd=settings.caliper_width,
            penalty=settings.caliper_penalty,
            scale=settings.caliper_scale,
        )
        if settings.dump_distances:
            _dump_distance_matrix(D, settings.dump_distances, node.label)

        try:
            match, diagnostics = select_k(D, X_e, X_c, spool, settings.k_range)
        except InfeasibleMatchError as exc:
            report.failed = True
            report.failure_reason = f"matching infeasible: {exc}"
            continue

        report.k = match.k
        report.match = match
        report.diagnostics = diagnostics
        flow.after_exposed = match.n_exposed()
        flow.after_controls = match.n_controls()

        weights_after = np.zeros(len(pool_ids))
        pos = {u: i for i, u in enumerate(pool_ids)}
        for uid, w in match_weights(match).items():
            weights_after[pos[uid]] = w
        weights_before = np.concatenate(
            [
                np.full(len(exposed_pool), 1.0 / len(exposed_pool)),
                np.full(len(control_pool), 1.0 / len(control_pool)),
            ]
        )
        report.balance = standardized_differences(
            Xp, zp, weights_before, weights_after, labels=labels
        )
        if diagnostics.failed:
            report.failed = True
            report.failure_reason = (
                f"balance failure: max post-match ASD {diagnostics.max_asd:.4f} >= 0.2"
            )
            continue

        matched_exposed[node_id] = match.matched_exposed()
        matched_controls[node_id] = match.matched_controls()

    allocation = allocate_alpha(
        derive_constraints(tree), settings.alpha, policy=settings.alpha_policy
    )

    outcome_results: dict = {}
    decisions: dict = {}
    for name in cohort.outcome_names:
        values = cohort.outcome_vector(name)
        role = outcome_roles.get(name, "co-primary")
        if role == "co-primary":
            decision, per_node = _run_gated_outcome(
                tree, allocation, nodes, values, settings
            )
            decisions[name] = decision
        else:
            per_node = _run_secondary_outcome(tree, allocation, nodes, values, settings)
        outcome_results[name] = per_node

    return StudyReport(
        tree_labels=tree.labels(),
        allocation=allocation,
        nodes=nodes,
        outcomes=outcome_results,
        decisions=decisions,
        outcome_roles=dict(outcome_roles),
        seed=seed,
        n_subjects=len(cohort),
        column_labels=tuple(labels),
    )


def _complete_submatch(match: FullMatch, values: Mapping):
    """Matched sets whose units all carry the outcome."""
    kept = tuple(
        s
        for s in match.sets
        if all(values.get(u) is not None for u in (*s.exposed, *s.controls))
    )
    if not kept:
        return None
    return replace(match, sets=kept)


def _node_test(node, match, values, level, settings):
    """m-test plus CI for one node; returns NodeOutcome fields."""
    sub = _complete_submatch(match, values)
    if sub is None:
        return None, 0, "no matched set has complete outcomes"
    deviate, p = m_test(sub, values, node.tau0, settings.mstat)
    lower = upper = tau_hat = float("nan")
    if settings.compute_ci:
        try:
            lower, upper, tau_hat = ci_invert(sub, values, level, settings.mstat)
        except TreematchError:
            pass  # unbounded or pathological interval: reported as NA
    result = TestResult(
        node_label=node.label,
        tau0=node.tau0,
        p_value=p,
        deviate=deviate,
        ci_lower=lower,
        ci_upper=upper,
        point_estimate=tau_hat,
        level=level,
    )
    return result, len(sub.sets), ""


def _run_gated_outcome(tree, allocation, nodes, values, settings):
    results: dict = {}

    def provider(node_id, tau0, level):
        node = tree.node(node_id)
        result, used, note = _node_test(
            node, nodes[node_id].match, values, level, settings
        )
        if result is None:
            raise TreematchError(note)
        results[node_id] = (result, used)
        return result.p_value

    decision = run_ordered_testing(
        tree,
        allocation,
        provider,
        testable=lambda i: not nodes[i].failed,
    )
    per_node: dict = {}
    for node_id in tree.breadth_first():
        status = decision.status[node_id]
        if node_id in results:
            result, used = results[node_id]
            per_node[node_id] = NodeOutcome(
                result=result, status=status, role="co-primary", sets_used=used
            )
        else:
            note = nodes[node_id].failure_reason if nodes[node_id].failed else ""
            per_node[node_id] = NodeOutcome(
                result=None, status=status, role="co-primary", note=note
            )
    return decision, per_node


def _run_secondary_outcome(tree, allocation, nodes, values, settings):
    """Unadjusted per-node tests, labeled non-confirmatory."""
    per_node: dict = {}
    for node_id in tree.breadth_first():
        node = tree.node(node_id)
        if nodes[node_id].failed or nodes[node_id].match is None:
            per_node[node_id] = NodeOutcome(
                result=None,
                status=TestStatus.NOT_TESTED,
                role="secondary",
                note=nodes[node_id].failure_reason,
            )
            continue
        level = allocation.level(node_id)
        result, used, note = _node_test(node, nodes[node_id].match, values, level, settings)
        if result is None:
            per_node[node_id] = NodeOutcome(
                result=None, status=TestStatus.NOT_TESTED, role="secondary", note=note
            )
            continue
        status = (
            TestStatus.REJECTED if result.p_value < level else TestStatus.NOT_REJECTED
        )
        per_node[node_id] = NodeOutcome(
            result=result, status=status, role="secondary", sets_used=used
        )
    return per_node


def _dump_distance_matrix(D, out_dir, label):
    """Debug dump of a (possibly large) caliper-adjusted distance matrix."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"distances_{label}.tsv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["exposed_id", *map(str, D.control_ids)]) + "\n")
        for i, eid in enumerate(D.exposed_ids):
            row = "\t".join(f"{v:.6f}" for v in D.values[i])
            fh.write(f"{eid}\t{row}\n")


# ---------------------------------------------------------------------------
# report emission


def _fmt(x, digits=6):
    if x is None:
        return "NA"
    if isinstance(x, float):
        if math.isnan(x):
            return "NA"
        return f"{x:.{digits}g}"
    return str(x)


def report_jsonable(report: StudyReport) -> dict:
    nodes = {}
    for node_id, nr in sorted(report.nodes.items()):
        entry = {
            "label": nr.label,
            "failed": nr.failed,
            "failure_reason": nr.failure_reason,
            "k": nr.k,
            "counts": {
                "before": [nr.flow.before_exposed, nr.flow.before_controls],
                "dropped": [nr.flow.dropped_exposed, nr.flow.dropped_controls],
                "after": [nr.flow.after_exposed, nr.flow.after_controls],
            },
        }
        if nr.balance is not None:
            entry["balance"] = {
                "labels": list(nr.balance.labels),
                "delta_before": [round(float(v), 10) for v in nr.balance.delta_before],
                "delta_after": [round(float(v), 10) for v in nr.balance.delta_after],
                "pooled_sd": [round(float(v), 10) for v in nr.balance.pooled_sd],
            }
        if nr.diagnostics is not None:
            entry["selection"] = [
                {
                    "k": c.k,
                    "feasible": c.feasible,
                    "weak_count": c.weak_count,
                    "max_asd": None if math.isnan(c.max_asd) else round(c.max_asd, 10),
                }
                for c in nr.diagnostics.candidates
            ]
        if nr.match is not None:
            entry["matched_sets"] = [
                {"exposed": list(s.exposed), "controls": list(s.controls)}
                for s in nr.match.sets
            ]
        nodes[str(node_id)] = entry

    outcomes = {}
    for name, per_node in report.outcomes.items():
        rows = {}
        for node_id, no in sorted(per_node.items()):
            row = {
                "status": no.status.value,
                "role": no.role,
                "sets_used": no.sets_used,
                "note": no.note,
            }
            if no.result is not None:
                row.update(
                    tau0=no.result.tau0,
                    p_value=round(no.result.p_value, 12),
                    deviate=None
                    if math.isnan(no.result.deviate)
                    else round(no.result.deviate, 10),
                    ci_lower=None
                    if math.isnan(no.result.ci_lower)
                    else no.result.ci_lower,
                    ci_upper=None
                    if math.isnan(no.result.ci_upper)
                    else no.result.ci_upper,
                    point_estimate=None
                    if math.isnan(no.result.point_estimate)
                    else round(no.result.point_estimate, 6),
                    level=round(no.result.level, 12),
                )
            rows[str(node_id)] = row
        outcomes[name] = rows

    return {
        "seed": report.seed,
        "n_subjects": report.n_subjects,
        "tree": {str(i): lbl for i, lbl in report.tree_labels.items()},
        "alpha": report.allocation.alpha,
        "levels": {
            str(i): round(lvl, 12) for i, lvl in sorted(report.allocation.levels.items())
        },
        "constraints": [sorted(s) for s in report.allocation.constraints],
        "nodes": nodes,
        "outcomes": outcomes,
        "outcome_roles": report.outcome_roles,
    }


def _counts_table(report: StudyReport) -> str:
    lines = [
        "\t".join(
            [
                "exposure",
                "before_exposed", "before_controls", "before_total",
                "extreme_ps_exposed", "extreme_ps_controls", "extreme_ps_total",
                "after_exposed", "after_controls", "after_total",
                "k", "status",
            ]
        )
    ]
    for node_id, nr in sorted(report.nodes.items()):
        row = nr.flow.row()
        status = "failed" if nr.failed else "matched"
        lines.append(
            "\t".join([nr.label, *map(str, row), _fmt(nr.k), status])
        )
    return "\n".join(lines) + "\n"


def _tests_table(report: StudyReport) -> str:
    lines = [
        "\t".join(
            [
                "outcome", "role", "exposure", "tau0", "deviate", "p_value",
                "ci_lower", "ci_upper", "point_estimate", "level", "decision",
            ]
        )
    ]
    for name in report.outcomes:
        per_node = report.outcomes[name]
        for node_id in sorted(per_node):
            no = per_node[node_id]
            label = report.tree_labels[node_id]
            if no.result is None:
                lines.append(
                    "\t".join(
                        [name, no.role, label, "NA", "NA", "NA", "NA", "NA", "NA",
                         "NA", no.status.value]
                    )
                )
            else:
                r = no.result
                lines.append(
                    "\t".join(
                        [
                            name, no.role, label, _fmt(r.tau0), _fmt(r.deviate),
                            _fmt(r.p_value), _fmt(r.ci_lower), _fmt(r.ci_upper),
                            _fmt(r.point_estimate), _fmt(r.level), no.status.value,
                        ]
                    )
                )
    return "\n".join(lines) + "\n"


def _balance_tables(report: StudyReport) -> dict:
    tables = {}
    for node_id, nr in sorted(report.nodes.items()):
        if nr.balance is None:
            continue
        lines = ["\t".join(["covariate", "delta_before", "delta_after", "pooled_sd",
                            "weak_after", "fail_after"])]
        b = nr.balance
        weak = b.weak_flags()
        fail = b.fail_flags()
        for i, lbl in enumerate(b.labels):
            lines.append(
                "\t".join(
                    [
                        str(lbl),
                        _fmt(float(b.delta_before[i]), 10),
                        _fmt(float(b.delta_after[i]), 10),
                        _fmt(float(b.pooled_sd[i]), 10),
                        str(bool(weak[i])),
                        str(bool(fail[i])),
                    ]
                )
            )
        tables[f"balance_{node_id}_{nr.label}.tsv"] = "\n".join(lines) + "\n"
    return tables


def _human_report(report: StudyReport) -> str:
    out = []
    out.append("MATCHED STUDY REPORT")
    out.append(f"subjects: {report.n_subjects}    seed: {report.seed}")
    out.append("")
    out.append("Significance-level allocation (alpha = %s)" % _fmt(report.allocation.alpha))
    for i in sorted(report.allocation.levels):
        out.append(
            f"  {report.tree_labels[i]:<16} level {report.allocation.levels[i]:.6f}"
        )
    out.append("  constraints:")
    for s in report.allocation.constraints:
        names = " + ".join(report.tree_labels[i] for i in sorted(s))
        out.append(f"    {names} <= alpha")
    out.append("")
    out.append("Sample flow (before / extreme propensity score / after matching)")
    header = (
        f"  {'exposure':<16}{'bE':>6}{'bC':>6}{'bT':>7}"
        f"{'xE':>6}{'xC':>6}{'xT':>7}{'aE':>6}{'aC':>6}{'aT':>7}  k  status"
    )
    out.append(header)
    for node_id, nr in sorted(report.nodes.items()):
        r = nr.flow.row()
        status = "FAILED: " + nr.failure_reason if nr.failed else "matched"
        out.append(
            f"  {nr.label:<16}"
            + "".join(f"{v:>6}" if i % 3 != 2 else f"{v:>7}" for i, v in enumerate(r))
            + f"  {_fmt(nr.k):>2} {status}"
        )
    out.append("")
    out.append("Balance (max |ASD| before -> after, weak band count after)")
    for node_id, nr in sorted(report.nodes.items()):
        if nr.balance is None:
            out.append(f"  {nr.label:<16} (not matched)")
            continue
        out.append(
            f"  {nr.label:<16} {nr.balance.max_asd(after=False):.4f} -> "
            f"{nr.balance.max_asd(after=True):.4f}   weak {nr.balance.weak_count()}"
        )
    for name, per_node in report.outcomes.items():
        out.append("")
        role = report.outcome_roles.get(name, "co-primary")
        out.append(f"Outcome {name!r} ({role})")
        for node_id in sorted(per_node):
            no = per_node[node_id]
            label = report.tree_labels[node_id]
            if no.result is None:
                out.append(f"  {label:<16} {no.status.value:<13} {no.note}")
            else:
                r = no.result
                out.append(
                    f"  {label:<16} {no.status.value:<13} p={_fmt(r.p_value)} "
                    f"tau=[{_fmt(r.ci_lower)}, {_fmt(r.ci_upper)}] "
                    f"est={_fmt(r.point_estimate)} level={_fmt(r.level)}"
                )
    return "\n".join(out) + "\n"


def emit_report(report: StudyReport, out_dir, format: str = "structured-text") -> list:
    """Write report files; returns the written paths (deterministic bytes)."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def write(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        written.append(path)

    if format == "structured-text":
        write(
            "report.json",
            json.dumps(report_jsonable(report), sort_keys=True, indent=2) + "\n",
        )
        write("counts.tsv", _counts_table(report))
        write("tests.tsv", _tests_table(report))
        for name, text in _balance_tables(report).items():
            write(name, text)
    elif format == "human-table":
        write("report.txt", _human_report(report))
    else:
        raise TreematchError(f"unknown report format {format!r}")
    return written
