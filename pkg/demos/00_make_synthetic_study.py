"""Generate the shipped synthetic study: a cohort CSV with raw survey-style
columns (self-rated health 1..5, nine depression items, BMI, recorded income
midpoints, a sprinkle of missing cells) driven by the confounded activity
generator.  Deterministic: running it twice rewrites identical bytes.

Usage:  python demos/00_make_synthetic_study.py
"""

import csv
import os

import numpy as np

from treematch.simharness import SyntheticDGP, generate_cohort

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "configs", "cohort_synthetic.csv")

MIDPOINTS = [5000 + 10000 * i for i in range(10)] + [105000]


def main():
    # Moderate confounding plus a genuine whole-hierarchy benefit of activity
    # participation, so the demo study has something to find.
    dgp = SyntheticDGP(
        n=400,
        effects={"any-activity": -0.8},  # lower latent burden for participants
        confounding={"age": 0.3, "ses": 0.6, "male": 0.5},
        outcome_coefs={"age": 0.2, "ses": -0.7, "male": 0.3},
        noise_sd=1.0,
        seed=20240601,
    )
    cohort = generate_cohort(dgp)
    rng = np.random.default_rng(987654321)

    rows = []
    for s in cohort:
        burden = s.outcomes["y"]  # latent health burden (lower is healthier)
        # self-rated health: 1 (excellent) .. 5 (poor), monotone in burden
        srh = int(np.clip(np.round(3.0 + 0.9 * burden + rng.normal(0, 0.7)), 1, 5))
        # nine questionnaire items, each 0..3, rising with burden
        lam = np.exp(0.35 * burden - 1.1)
        items = np.clip(rng.poisson(lam, size=9), 0, 3)
        bmi = 22.0 + 1.6 * burden + rng.normal(0, 2.0)
        income = MIDPOINTS[
            int(np.clip(5 + 2.5 * s.covariates["ses"] + rng.normal(0, 1.2), 0, 10))
        ]
        row = {
            "id": s.id,
            "activities": ";".join(sorted(s.activities)),
            "age": f"{s.covariates['age']:.2f}",
            "ses": f"{s.covariates['ses']:.4f}",
            "psych": f"{s.covariates['psych']:.4f}",
            "male": "male" if s.covariates["male"] == 1.0 else "female",
            "urban": "urban" if s.covariates["urban"] == 1.0 else "rural",
            "region": s.covariates["region"],
            "income": str(income),
            "srh_raw": str(srh),
            **{f"phq{i+1}": str(int(v)) for i, v in enumerate(items)},
            "bmi": f"{bmi:.2f}",
        }
        # sparse missingness: blank a few age and region cells
        if rng.uniform() < 0.02:
            row["age"] = ""
        if rng.uniform() < 0.015:
            row["region"] = ""
        rows.append(row)

    fields = list(rows[0].keys())
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} subjects to {os.path.normpath(OUT)}")


if __name__ == "__main__":
    main()
