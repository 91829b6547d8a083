"""Acceptance suite: every criterion at its stated tolerance, one PASS/FAIL
line per criterion (run with ``pytest tests/test_acceptance.py -s``).

The Monte Carlo criteria (5-8) run the full stated replication counts and
take a few minutes; everything else is second-scale.
"""

import itertools
import json
import os
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from treematch.balance import match_weights, standardized_differences
from treematch.cohort import default_classification, default_tree
from treematch.distance import DistanceMatrix
from treematch.fullmatch import FullMatch, MatchedSet, optimal_full_match
from treematch.hypotree import (
    TestStatus,
    allocate_alpha,
    derive_constraints,
    run_ordered_testing,
)
from treematch.inference import MStatConfig, m_test
from treematch.pipeline import StudySettings, run_matched_study
from treematch.propensity import fit_logistic, trim_extremes
from treematch.simharness import (
    estimate_coverage,
    estimate_fwer,
    generate_cohort,
    load_dgp,
    _replication_seed,
)

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(HERE, "..", "configs")

LABELS = {
    "any-activity": 0, "any-sports": 1, "no-sports": 2, "any-contact": 3,
    "no-contact": 4, "any-collision": 5, "no-collision": 6,
}


@contextmanager
def criterion(number, name):
    start = time.time()
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {number} ({name}): FAIL [{time.time() - start:.1f}s]")
        raise
    print(f"\nACCEPTANCE {number} ({name}): PASS [{time.time() - start:.1f}s]")


# ---------------------------------------------------------------------------
# 1. constraint reproduction


def test_criterion_1_constraint_reproduction():
    with criterion(1, "constraint reproduction"):
        start = time.time()
        got = set(derive_constraints(default_tree()))
        expected = {
            frozenset({LABELS["any-activity"]}),
            frozenset({LABELS["any-sports"]}),
            frozenset({LABELS["no-sports"], LABELS["any-contact"]}),
            frozenset({LABELS["no-sports"], LABELS["no-contact"],
                       LABELS["any-collision"]}),
            frozenset({LABELS["no-sports"], LABELS["no-contact"],
                       LABELS["no-collision"]}),
        }
        assert got == expected
        assert time.time() - start < 1.0


# ---------------------------------------------------------------------------
# 2. allocation reproduction


def test_criterion_2_allocation_reproduction():
    with criterion(2, "allocation reproduction"):
        start = time.time()
        constraints = derive_constraints(default_tree())
        allocation = allocate_alpha(constraints, 0.05, policy="k-plus-one")
        third = 0.05 / 3
        for label in ("no-sports", "no-contact", "any-collision", "no-collision"):
            assert allocation.level(LABELS[label]) == pytest.approx(third)
        assert allocation.level(LABELS["any-activity"]) == pytest.approx(0.05)
        assert allocation.level(LABELS["any-sports"]) == pytest.approx(0.05)
        for s in constraints:
            assert sum(allocation.level(i) for i in s) <= 0.05 + 1e-12
        assert time.time() - start < 1.0


# ---------------------------------------------------------------------------
# 3. ordered-testing logic


def test_criterion_3_ordered_testing_logic():
    with criterion(3, "ordered-testing NT pattern"):
        start = time.time()
        tree = default_tree()
        allocation = allocate_alpha(derive_constraints(tree), 0.05)
        # reject any-activity, any-sports, no-contact; fail no-sports and
        # any-contact; the collision split must come out NT
        ps = {0: 1e-4, 1: 1e-4, 2: 0.5, 3: 0.5, 4: 1e-4, 5: 0.0, 6: 0.0}
        decision = run_ordered_testing(tree, allocation, lambda i, t, l: ps[i])
        assert decision.status[LABELS["any-activity"]] is TestStatus.REJECTED
        assert decision.status[LABELS["any-sports"]] is TestStatus.REJECTED
        assert decision.status[LABELS["no-contact"]] is TestStatus.REJECTED
        assert decision.status[LABELS["no-sports"]] is TestStatus.NOT_REJECTED
        assert decision.status[LABELS["any-contact"]] is TestStatus.NOT_REJECTED
        assert decision.status[LABELS["any-collision"]] is TestStatus.NOT_TESTED
        assert decision.status[LABELS["no-collision"]] is TestStatus.NOT_TESTED
        assert LABELS["any-collision"] not in decision.p_values
        assert LABELS["no-collision"] not in decision.p_values
        assert time.time() - start < 1.0


# ---------------------------------------------------------------------------
# 4. matching optimality


def test_criterion_4_matching_optimality():
    import test_fullmatch as fm

    with criterion(4, "matching optimality vs brute force"):
        start = time.time()
        rng = np.random.default_rng(20240215)
        checked_int = 0
        checked_real = 0
        while checked_int < 140 or checked_real < 70:
            n_e = int(rng.integers(1, 6))
            n_c = int(rng.integers(1, 8 - n_e))
            k = int(rng.integers(1, 4))
            if n_e > k * n_c or n_c > k * n_e:
                continue
            if checked_int < 140:
                values = rng.integers(0, 60, size=(n_e, n_c)).astype(float)
                match = optimal_full_match(fm.dmat(values), k)
                expected = fm.brute_force_optimum(values, k)
                assert match.total_distance == pytest.approx(expected), (
                    values.tolist(), k)
                checked_int += 1
            else:
                values = rng.uniform(0.0, 25.0, size=(n_e, n_c))
                match = optimal_full_match(fm.dmat(values), k)
                expected = fm.brute_force_optimum(values, k)
                assert match.total_distance == pytest.approx(
                    expected, rel=1e-6, abs=1e-5
                ), (values.tolist(), k)
                checked_real += 1
        elapsed = time.time() - start
        assert checked_int + checked_real >= 200
        assert elapsed < 30.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 5. FWER control


def test_criterion_5_fwer_control():
    with criterion(5, "FWER control at alpha=0.05, 2000 reps"):
        dgp = load_dgp(os.path.join(CONFIGS, "dgp_null.yaml"))
        summary = estimate_fwer(
            dgp, StudySettings(alpha=0.05, k_range=(1, 2)), reps=2000, master_seed=0
        )
        bound = 0.05 + 2 * np.sqrt(0.05 * 0.95 / 2000)
        print(f"  empirical FWER {summary.fwer:.4f} vs bound {bound:.4f} "
              f"(errors {summary.errors})")
        assert summary.errors == 0
        assert summary.fwer <= bound


# ---------------------------------------------------------------------------
# 6. p-value validity and mode agreement


def test_criterion_6_pvalue_validity():
    with criterion(6, "p-value validity and normal/exact agreement"):
        # exact-mode validity on a fixed matched structure under the sharp null
        match = FullMatch(
            sets=tuple(
                [MatchedSet((f"e{i}",), (f"c{i}",)) for i in range(5)]
                + [MatchedSet((f"E{i}",), (f"C{i}a", f"C{i}b")) for i in range(3)]
                + [MatchedSet((f"F{i}a", f"F{i}b"), (f"g{i}",)) for i in range(2)]
            ),
            k=2,
            total_distance=0.0,
        )
        units = [u for s in match.sets for u in (*s.exposed, *s.controls)]
        rng = np.random.default_rng(60)
        cfg = MStatConfig(mode="exact-enumeration")
        ps = np.empty(2000)
        for i in range(2000):
            outcomes = {u: float(rng.normal()) for u in units}
            _, ps[i] = m_test(match, outcomes, 0.0, cfg)
        for u in (0.01, 0.05, 0.1, 0.2):
            frac = float((ps <= u).mean())
            print(f"  Pr(p <= {u}) = {frac:.4f} (bound {u + 0.01:.4f})")
            assert frac <= u + 0.01

        # normal vs exact agreement on random instances with 8..12 sets
        rng = np.random.default_rng(61)
        worst = 0.0
        for _ in range(100):
            n_sets = int(rng.integers(8, 13))
            sets, outcomes, uid = [], {}, 0
            for _ in range(n_sets):
                n = int(rng.integers(2, 4))
                names = [f"u{uid + j}" for j in range(n)]
                if rng.uniform() < 0.5:
                    sets.append(MatchedSet((names[0],), tuple(names[1:])))
                else:
                    sets.append(MatchedSet(tuple(names[1:]), (names[0],)))
                for name in names:
                    outcomes[name] = float(rng.normal())
                uid += n
            inst = FullMatch(sets=tuple(sets), k=2, total_distance=0.0)
            _, p_n = m_test(inst, outcomes, 0.0, MStatConfig(mode="normal"))
            _, p_e = m_test(inst, outcomes, 0.0, cfg)
            worst = max(worst, abs(p_n - p_e))
        print(f"  worst |p_normal - p_exact| over 100 instances: {worst:.4f}")
        assert worst <= 0.05


# ---------------------------------------------------------------------------
# 7. CI coverage


def test_criterion_7_ci_coverage():
    with criterion(7, "CI coverage under additive effect 1.0, 1000 reps"):
        dgp = load_dgp(os.path.join(CONFIGS, "dgp_effect.yaml"))
        summary = estimate_coverage(
            dgp, StudySettings(alpha=0.05, k_range=(1, 2, 3)), reps=1000,
            master_seed=0,
        )
        root = summary.coverage["any-activity"]
        print(f"  nominal-95% (root) coverage {root:.4f} over "
              f"{summary.tested_count['any-activity']} tested replications")
        for label, cov in summary.coverage.items():
            if cov is not None:
                print(f"    {label:<14} {cov:.4f} ({summary.tested_count[label]} tested)")
        assert summary.errors == 0
        assert root >= 0.93
        # every other tested node runs at a stricter level; none may dip below
        for label, cov in summary.coverage.items():
            if cov is not None and summary.tested_count[label] >= 50:
                assert cov >= 0.93, label


# ---------------------------------------------------------------------------
# 8. balance machinery


def test_criterion_8_balance_machinery():
    from treematch.hypotree import ExposureTree, HypothesisNode

    with criterion(8, "balance values and Monte Carlo balance improvement"):
        start = time.time()
        # hand-computed standardized difference
        X = np.array([[1.0], [3.0], [0.0], [2.0]])
        table = standardized_differences(
            X, [True, True, False, False], [0.5] * 4, [0.5] * 4
        )
        assert table.delta_before[0] == pytest.approx(0.7071, abs=1e-4)
        # hand-computed weight normalization
        match = FullMatch(
            sets=(
                MatchedSet(("e1",), ("c1", "c2")),
                MatchedSet(("e2", "e3"), ("c3",)),
            ),
            k=2,
            total_distance=0.0,
        )
        w = match_weights(match)
        assert w["c1"] == pytest.approx(1 / 6)
        assert w["c2"] == pytest.approx(1 / 6)
        assert w["c3"] == pytest.approx(2 / 3)

        # Monte Carlo balance improvement on the shipped confounded DGP
        dgp = load_dgp(os.path.join(CONFIGS, "dgp_confounded.yaml"))
        tree = ExposureTree(
            [HypothesisNode(id=0, label="any-activity", parent=None,
                            predicate={"type": "any_activity"})]
        )
        cls = default_classification()
        settings = StudySettings(k_range=(1, 2, 3, 4), compute_ci=False)
        ok_max = 0
        strict_violations = 0
        pre_total = post_total = 0
        reps = 200
        for rep in range(reps):
            cohort = generate_cohort(dgp, seed=_replication_seed(0, rep))
            report = run_matched_study(
                cohort, tree, cls, settings, outcome_roles={"y": "co-primary"}
            )
            balance = report.nodes[0].balance
            assert balance is not None
            pre_w = int(balance.weak_flags(after=False).sum())
            post_w = int(balance.weak_flags(after=True).sum())
            pre_total += pre_w
            post_total += post_w
            if balance.max_asd(after=True) < 0.2:
                ok_max += 1
            if post_w > pre_w:
                strict_violations += 1
        print(f"  post-match max ASD < 0.2 in {ok_max}/{reps} replications")
        print(f"  weak-band counts: post total {post_total} vs pre total "
              f"{pre_total} (per-replication exceedances: {strict_violations})")
        assert ok_max >= 0.95 * reps
        # matching never worsens the weak-imbalance count in aggregate
        assert post_total <= pre_total
        elapsed = time.time() - start
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 9. logistic fit and trimming


def test_criterion_9_logistic_and_trimming():
    with criterion(9, "logistic golden fit and trim rule"):
        start = time.time()
        import test_propensity as tp

        model = fit_logistic(tp.GOLDEN_X, tp.GOLDEN_Z)
        assert np.abs(model.coefficients - tp.GOLDEN_COEF).max() < 1e-6

        result = trim_extremes(
            [0.3, 0.6, 0.9, 0.2, 0.5, 0.8],
            [True, True, True, False, False, False],
            ids=["e1", "e2", "e3", "c1", "c2", "c3"],
        )
        assert result.dropped_exposed == ("e3",)
        assert result.dropped_control == ("c1",)

        result = trim_extremes(
            [0.2, 0.5, 0.8, 0.2, 0.5, 0.8],
            [True, True, True, False, False, False],
        )
        assert result.dropped_exposed == () and result.dropped_control == ()
        assert time.time() - start < 1.0


# ---------------------------------------------------------------------------
# 10. end-to-end determinism


def test_criterion_10_end_to_end_determinism(tmp_path):
    with criterion(10, "byte-identical reports across CLI invocations"):
        start = time.time()
        config = os.path.join(CONFIGS, "synthetic_study.yaml")
        env = dict(os.environ)
        src = os.path.join(HERE, "..", "src")
        env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
        outs = []
        for run_dir in ("one", "two"):
            out = tmp_path / run_dir
            proc = subprocess.run(
                [sys.executable, "-m", "treematch.cli", "run",
                 "--config", config, "--out", str(out)],
                capture_output=True, text=True, env=env,
            )
            assert proc.returncode == 0, proc.stderr
            outs.append(out)
        names = sorted(os.listdir(outs[0]))
        assert names == sorted(os.listdir(outs[1]))
        assert names, "no report files written"
        for name in names:
            a = (outs[0] / name).read_bytes()
            b = (outs[1] / name).read_bytes()
            assert a == b, f"{name} differs between invocations"
        payload = json.loads((outs[0] / "report.json").read_text())
        assert len(payload["nodes"]) == 7
        elapsed = time.time() - start
        assert elapsed < 60.0, f"took {elapsed:.1f}s"
