"""Command-line entry points.

Subcommands: ``run`` (full study -> report files), ``allocate`` (constraint
sets and significance levels for a tree), ``match`` (sample flow and per-k
diagnostics), ``balance`` (standardized-difference tables), ``test``
(per-node inference rows), ``simulate`` (Monte Carlo validation).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .cohort import default_tree, load_cohort
from .hypotree import allocate_alpha, derive_constraints, load_tree
from .pipeline import (
    StudyConfig,
    emit_report,
    load_study_config,
    run_study,
)
from .simharness import SyntheticDGP, estimate_coverage, estimate_fwer, load_dgp


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--alpha", type=float, default=None, help="override the global alpha")
    parser.add_argument(
        "--delimiter", default=None, help="override the cohort field delimiter"
    )
    parser.add_argument(
        "--format",
        choices=["structured-text", "human-table", "both"],
        default="both",
        help="report flavor(s) to write",
    )


def _load_config(args) -> StudyConfig:
    cfg = load_study_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.alpha is not None:
        cfg = dataclasses.replace(
            cfg, settings=dataclasses.replace(cfg.settings, alpha=args.alpha)
        )
    if getattr(args, "delimiter", None):
        cfg = dataclasses.replace(cfg, delimiter=args.delimiter)
    return cfg


def _emit(report, out_dir, fmt):
    written = []
    if fmt in ("structured-text", "both"):
        written += emit_report(report, out_dir, "structured-text")
    if fmt in ("human-table", "both"):
        written += emit_report(report, out_dir, "human-table")
    for path in written:
        print(path)


def cmd_run(args):
    cfg = _load_config(args)
    report = run_study(cfg)
    _emit(report, args.out, args.format)
    if args.format in ("structured-text", "both"):
        # canonical serialized cohort, for pipeline reuse
        cohort = load_cohort(cfg.cohort_path, cfg.schema, cfg.outcomes, cfg.delimiter)
        path = os.path.join(args.out, "cohort.json")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(cohort.canonical_json() + "\n")
        print(path)


def cmd_allocate(args):
    tree = load_tree(args.tree) if args.tree else default_tree()
    constraints = derive_constraints(tree)
    allocation = allocate_alpha(constraints, args.alpha or 0.05, policy=args.policy)
    labels = tree.labels()
    payload = {
        "alpha": allocation.alpha,
        "policy": args.policy,
        "constraints": [[labels[i] for i in sorted(s)] for s in constraints],
        "levels": {labels[i]: allocation.levels[i] for i in sorted(allocation.levels)},
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    print()
    print(f"{'hypothesis':<18}{'level':>12}")
    for i in sorted(allocation.levels):
        print(f"{labels[i]:<18}{allocation.levels[i]:>12.6f}")
    print()
    print("constraints (each must sum to at most alpha):")
    for s in constraints:
        print("  " + " + ".join(labels[i] for i in sorted(s)) + f" <= {allocation.alpha}")


def cmd_match(args):
    cfg = _load_config(args)
    if args.dump_distances:
        cfg = dataclasses.replace(
            cfg,
            settings=dataclasses.replace(
                cfg.settings, dump_distances=args.dump_distances
            ),
        )
    report = run_study(cfg)
    from .pipeline import _counts_table

    sys.stdout.write(_counts_table(report))
    print()
    for node_id, nr in sorted(report.nodes.items()):
        if nr.diagnostics is None:
            continue
        print(f"[{nr.label}] per-k diagnostics (chosen k={nr.k}):")
        for cand in nr.diagnostics.candidates:
            if not cand.feasible:
                print(f"  k={cand.k}: infeasible")
            else:
                print(
                    f"  k={cand.k}: weak-band count {cand.weak_count}, "
                    f"max ASD {cand.max_asd:.4f}, total distance {cand.total_distance:.4f}"
                )
    if args.out:
        _emit(report, args.out, args.format)


def cmd_balance(args):
    report = run_study(_load_config(args))
    from .pipeline import _balance_tables

    for name, table in _balance_tables(report).items():
        print(f"== {name}")
        sys.stdout.write(table)
    if args.out:
        _emit(report, args.out, args.format)


def cmd_test(args):
    report = run_study(_load_config(args))
    from .pipeline import _tests_table

    sys.stdout.write(_tests_table(report))
    if args.out:
        _emit(report, args.out, args.format)


def _shipped_null_dgp() -> SyntheticDGP:
    # mirrors configs/dgp_null.yaml: compact all-null cohort, Monte Carlo
    # suites finish in well under a minute per hundred replications
    return SyntheticDGP(
        n=140,
        participation={
            "active": -0.2, "sport": 0.5, "contact": 0.5,
            "collision": 0.0, "extra_nonsport": -1.2,
        },
        confounding={"age": 0.3, "ses": 0.5, "male": 0.4},
        outcome_coefs={"age": 0.2, "ses": 0.6, "male": -0.3},
        seed=0,
    )


def cmd_simulate(args):
    dgp = load_dgp(args.dgp) if args.dgp else _shipped_null_dgp()
    if args.seed is not None:
        master = args.seed
    else:
        master = dgp.seed
    from .pipeline import StudySettings

    settings = StudySettings(
        alpha=args.alpha if args.alpha is not None else 0.05,
        k_range=tuple(range(args.k_min, args.k_max + 1)),
    )
    if args.mode == "fwer":
        summary = estimate_fwer(dgp, settings, reps=args.reps, master_seed=master)
    else:
        summary = estimate_coverage(dgp, settings, reps=args.reps, master_seed=master)
    print(json.dumps(dataclasses.asdict(summary), indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treematch",
        description="Matched observational studies over a hierarchy of exposures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full study from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default="treematch_out")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_alloc = sub.add_parser("allocate", help="derive constraints and levels")
    p_alloc.add_argument("--tree", default=None, help="tree YAML (default: shipped)")
    p_alloc.add_argument("--alpha", type=float, default=0.05)
    p_alloc.add_argument("--policy", choices=["k-plus-one", "max-min"], default="k-plus-one")
    p_alloc.set_defaults(func=cmd_allocate)

    for name, fn, help_text in (
        ("match", cmd_match, "matching flow and per-k diagnostics"),
        ("balance", cmd_balance, "standardized-difference tables"),
        ("test", cmd_test, "per-node inference rows"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        if name == "match":
            p.add_argument(
                "--dump-distances", default=None, metavar="DIR",
                help="write per-node distance matrices as TSV (large)",
            )
        _add_common(p)
        p.set_defaults(func=fn)

    p_sim = sub.add_parser("simulate", help="Monte Carlo validation")
    p_sim.add_argument("--mode", choices=["fwer", "coverage"], default="fwer")
    p_sim.add_argument("--reps", type=int, default=200)
    p_sim.add_argument("--dgp", default=None, help="DGP YAML (default: the shipped all-null DGP)")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--alpha", type=float, default=None)
    p_sim.add_argument("--k-min", type=int, default=1)
    p_sim.add_argument("--k-max", type=int, default=2)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
