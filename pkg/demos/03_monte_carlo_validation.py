"""Monte Carlo validation at demo scale: family-wise error under the global
null and confidence-interval coverage under a uniform additive effect.

The full-acceptance versions (2000 and 1000 replications) live in
tests/test_acceptance.py; this script runs lighter replicates so the whole
story fits in about a minute.

Usage:  python demos/03_monte_carlo_validation.py [reps]
"""

import sys

from treematch import SyntheticDGP, estimate_coverage, estimate_fwer
from treematch.pipeline import StudySettings

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

null_dgp = SyntheticDGP(
    n=140,
    participation={
        "active": -0.2, "sport": 0.5, "contact": 0.5,
        "collision": 0.0, "extra_nonsport": -1.2,
    },
    confounding={"age": 0.3, "ses": 0.5, "male": 0.4},
    outcome_coefs={"age": 0.2, "ses": 0.6, "male": -0.3},
    seed=0,
)

print(f"FWER under the global null ({reps} replications, alpha = 0.05)...")
summary = estimate_fwer(null_dgp, StudySettings(k_range=(1, 2)), reps=reps)
print(f"  empirical FWER: {summary.fwer:.4f} (binomial SE {summary.fwer_se:.4f})")
print("  per-node rejection rates:")
for label, rate in summary.rejection_rate.items():
    print(f"    {label:<14} {rate:.4f}")
print(f"  replication errors: {summary.errors}")

effect_dgp = SyntheticDGP(
    n=220,
    participation={
        "active": -0.2, "sport": 0.5, "contact": 0.5,
        "collision": 0.0, "extra_nonsport": -1.2,
    },
    confounding={"age": 0.15, "ses": 0.25, "male": 0.2},
    outcome_coefs={"age": 0.2, "ses": 0.6, "male": -0.3},
    effects={"any-activity": 1.0},  # every exposure group shifted by +1
    seed=0,
)

print(f"\nCI coverage under a uniform additive effect of 1.0 "
      f"({reps} replications)...")
summary = estimate_coverage(effect_dgp, StudySettings(k_range=(1, 2, 3)), reps=reps)
print("  per-node coverage (conditional on the node being tested):")
for label, cov in summary.coverage.items():
    tested = summary.tested_count[label]
    shown = "n/a" if cov is None else f"{cov:.4f}"
    print(f"    {label:<14} {shown:>8}   (tested in {tested} replications)")
print(f"  mean max ASD before {summary.mean_max_asd_before:.3f} "
      f"-> after {summary.mean_max_asd_after:.3f}")
