"""treematch: matched observational studies over a hierarchy of exposures.

The workflow, end to end: classify each subject's activities into an
exposure hierarchy, allocate significance levels over the hypothesis tree,
build a propensity-trimmed optimal full match per node, check covariate
balance, run randomization inference with robust m-statistics, and walk the
tree with the gated testing-in-order procedure.  A simulation harness
generates confounded synthetic cohorts to validate the error-rate and
coverage guarantees by Monte Carlo.
"""

from .balance import BalanceTable, match_weights, pooled_sd, standardized_differences
from .cohort import (
    Cohort,
    CovariateEntry,
    CovariateSchema,
    OutcomeSpec,
    SportClassification,
    Subject,
    assign_exposures,
    default_classification,
    default_tree,
    dichotomize_health,
    encode_design_matrix,
    income_quintile,
    load_classification,
    load_cohort,
    phq9_total,
    write_cohort_csv,
)
from .distance import DistanceMatrix, apply_caliper, rank_mahalanobis, rank_transform
from .fullmatch import (
    FullMatch,
    MatchDiagnostics,
    MatchedSet,
    optimal_full_match,
    select_k,
)
from .hypotree import (
    AlphaAllocation,
    ExposureTree,
    HypothesisNode,
    TestDecision,
    TestStatus,
    TruthConfiguration,
    allocate_alpha,
    derive_constraints,
    enumerate_consistent_configs,
    load_tree,
    run_ordered_testing,
)
from .inference import MStatConfig, TestResult, ci_invert, m_test, node_pvalue_provider
from .pipeline import (
    StudyConfig,
    StudyReport,
    StudySettings,
    emit_report,
    load_study_config,
    run_matched_study,
    run_study,
)
from .propensity import PropensityModel, TrimResult, fit_logistic, trim_extremes
from .simharness import (
    MonteCarloSummary,
    SyntheticDGP,
    estimate_coverage,
    estimate_fwer,
    generate_cohort,
    load_dgp,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaAllocation",
    "BalanceTable",
    "Cohort",
    "CovariateEntry",
    "CovariateSchema",
    "DistanceMatrix",
    "ExposureTree",
    "FullMatch",
    "HypothesisNode",
    "MatchDiagnostics",
    "MatchedSet",
    "MonteCarloSummary",
    "MStatConfig",
    "OutcomeSpec",
    "PropensityModel",
    "SportClassification",
    "StudyConfig",
    "StudyReport",
    "StudySettings",
    "Subject",
    "SyntheticDGP",
    "TestDecision",
    "TestResult",
    "TestStatus",
    "TrimResult",
    "TruthConfiguration",
    "allocate_alpha",
    "apply_caliper",
    "assign_exposures",
    "ci_invert",
    "default_classification",
    "default_tree",
    "derive_constraints",
    "dichotomize_health",
    "emit_report",
    "encode_design_matrix",
    "enumerate_consistent_configs",
    "estimate_coverage",
    "estimate_fwer",
    "fit_logistic",
    "generate_cohort",
    "income_quintile",
    "load_classification",
    "load_cohort",
    "load_dgp",
    "load_study_config",
    "load_tree",
    "m_test",
    "match_weights",
    "node_pvalue_provider",
    "optimal_full_match",
    "phq9_total",
    "pooled_sd",
    "rank_mahalanobis",
    "rank_transform",
    "run_matched_study",
    "run_ordered_testing",
    "run_study",
    "select_k",
    "standardized_differences",
    "trim_extremes",
    "write_cohort_csv",
]
