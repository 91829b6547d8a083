"""Tree-structured null hypotheses: truth configurations, significance-level
allocation, and the gated testing-in-order driver.

Each node of the exposure hierarchy carries one null hypothesis (an additive
effect equal to ``tau0``, default 0).  The hypotheses are logically linked:
if the null at an internal node is false, the null at one of its children
must be false as well.  That structure is what lets every node be tested at
a level larger than a Bonferroni share while the family-wise error rate
stays at the global ``alpha``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import yaml

from .errors import (
    CapacityError,
    InfeasibleAllocationError,
    OrderedTestingError,
    TreematchError,
)

# Exhaustive truth-configuration enumeration is exponential in the node count.
MAX_ENUM_NODES = 25


@dataclass(frozen=True)
class HypothesisNode:
    """One exposure definition and its null hypothesis.

    ``predicate`` is an opaque membership rule consumed by the cohort module;
    the testing machinery never interprets it.
    """

    id: int
    label: str
    parent: Optional[int] = None
    tau0: float = 0.0
    predicate: Optional[Mapping] = None

    def __post_init__(self):
        if not math.isfinite(self.tau0):
            raise TreematchError(f"node {self.label!r}: tau0 must be finite")


class ExposureTree:
    """Rooted tree of hypothesis nodes with ids 0..n-1."""

    def __init__(self, nodes: Sequence[HypothesisNode]):
        self.nodes = tuple(sorted(nodes, key=lambda n: n.id))
        ids = [n.id for n in self.nodes]
        if ids != list(range(len(ids))):
            raise TreematchError(f"node ids must be 0..{len(ids) - 1}, got {ids}")
        roots = [n.id for n in self.nodes if n.parent is None]
        if len(roots) != 1:
            raise TreematchError(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0]
        self.children: dict[int, tuple[int, ...]] = {n.id: () for n in self.nodes}
        for n in self.nodes:
            if n.parent is not None:
                if n.parent not in self.children:
                    raise TreematchError(f"node {n.id} has unknown parent {n.parent}")
                self.children[n.parent] += (n.id,)
        # Reject cycles / disconnected parts: every node must reach the root.
        for n in self.nodes:
            seen = set()
            cur: Optional[int] = n.id
            while cur is not None:
                if cur in seen:
                    raise TreematchError(f"cycle through node {cur}")
                seen.add(cur)
                cur = self.nodes[cur].parent
            if self.root not in seen:
                raise TreematchError(f"node {n.id} is disconnected from the root")

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> HypothesisNode:
        return self.nodes[node_id]

    def ancestors(self, node_id: int) -> tuple[int, ...]:
        out = []
        cur = self.nodes[node_id].parent
        while cur is not None:
            out.append(cur)
            cur = self.nodes[cur].parent
        return tuple(out)

    def breadth_first(self) -> list[int]:
        order, queue = [], [self.root]
        while queue:
            v = queue.pop(0)
            order.append(v)
            queue.extend(self.children[v])
        return order

    def labels(self) -> dict[int, str]:
        return {n.id: n.label for n in self.nodes}


def load_tree(path) -> ExposureTree:
    """Read a tree from a YAML file with a top-level ``nodes`` list."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "nodes" not in raw:
        raise TreematchError(f"{path}: expected a mapping with a 'nodes' list")
    nodes = []
    for entry in raw["nodes"]:
        nodes.append(
            HypothesisNode(
                id=int(entry["id"]),
                label=str(entry["label"]),
                parent=None if entry.get("parent") is None else int(entry["parent"]),
                tau0=float(entry.get("tau0", 0.0)),
                predicate=entry.get("predicate"),
            )
        )
    return ExposureTree(nodes)


@dataclass(frozen=True)
class TruthConfiguration:
    """Truth value per node id; True means the null hypothesis holds."""

    truth: tuple[bool, ...]

    def __getitem__(self, node_id: int) -> bool:
        return self.truth[node_id]


def is_consistent(tree: ExposureTree, truth: Sequence[bool]) -> bool:
    """A false internal node must have at least one false child."""
    for n in tree.nodes:
        kids = tree.children[n.id]
        if kids and not truth[n.id] and all(truth[c] for c in kids):
            return False
    return True


def enumerate_consistent_configs(tree: ExposureTree) -> list[TruthConfiguration]:
    """All truth assignments compatible with the tree logic.

    Built bottom-up per subtree so only consistent assignments are ever
    materialized; the count is still potentially exponential, hence the
    node-count cap.
    """
    if len(tree) > MAX_ENUM_NODES:
        raise CapacityError(
            f"{len(tree)} nodes exceeds the enumeration bound of {MAX_ENUM_NODES}"
        )

    def subtree_configs(v: int) -> list[dict[int, bool]]:
        kids = tree.children[v]
        out: list[dict[int, bool]] = []
        if not kids:
            return [{v: True}, {v: False}]
        child_opts = [subtree_configs(c) for c in kids]
        for combo in itertools.product(*child_opts):
            merged: dict[int, bool] = {}
            for part in combo:
                merged.update(part)
            out.append({v: True, **merged})
            if any(not part[c] for part, c in zip(combo, kids)):
                out.append({v: False, **merged})
        return out

    configs = []
    for assignment in subtree_configs(tree.root):
        configs.append(
            TruthConfiguration(tuple(assignment[i] for i in range(len(tree))))
        )
    return configs


def _testable_true_set(tree: ExposureTree, cfg: TruthConfiguration) -> frozenset[int]:
    """Nodes whose null is true while every ancestor's null is false."""
    return frozenset(
        n.id
        for n in tree.nodes
        if cfg[n.id] and all(not cfg[a] for a in tree.ancestors(n.id))
    )


def derive_constraints(tree: ExposureTree) -> list[frozenset[int]]:
    """Maximal sets of hypotheses that can be simultaneously true and reachable.

    Each returned set S yields the level constraint sum(alpha_i for i in S)
    <= alpha.  Sets are deduplicated, filtered to the maximal ones under
    inclusion, and ordered by (size, sorted node ids).
    """
    sets = {_testable_true_set(tree, cfg) for cfg in enumerate_consistent_configs(tree)}
    sets.discard(frozenset())
    maximal = [s for s in sets if not any(s < t for t in sets)]
    return sorted(maximal, key=lambda s: (len(s), sorted(s)))


@dataclass(frozen=True)
class AlphaAllocation:
    """Per-node significance levels satisfying every constraint set."""

    alpha: float
    levels: Mapping[int, float]
    constraints: tuple[frozenset[int], ...]

    def level(self, node_id: int) -> float:
        return self.levels[node_id]

    def check(self, tol: float = 1e-12) -> None:
        for node_id, lvl in self.levels.items():
            # alpha = 0 is the degenerate closed-gate allocation (all levels 0)
            lower_ok = lvl > 0.0 or self.alpha == 0.0
            if not (lower_ok and lvl <= self.alpha + tol):
                raise InfeasibleAllocationError(
                    f"level for node {node_id} is {lvl}, outside (0, {self.alpha}]"
                )
        for s in self.constraints:
            total = sum(self.levels[i] for i in s)
            if total > self.alpha + tol:
                raise InfeasibleAllocationError(
                    f"constraint {sorted(s)} sums to {total} > alpha={self.alpha}"
                )


def allocate_alpha(
    constraints: Sequence[frozenset[int]],
    alpha: float,
    policy: str = "k-plus-one",
) -> AlphaAllocation:
    """Assign per-node levels under the constraint system.

    ``k-plus-one`` gives node i the level alpha / (size of the largest
    constraint containing i), the rule used for the shipped seven-node tree
    (leaf-side hypotheses end up at alpha/3).  ``max-min`` water-fills: all
    levels rise together and freeze as their constraints go tight, which
    maximizes the smallest level.
    """
    if not 0.0 <= alpha < 1.0:
        raise TreematchError(f"alpha must be in [0, 1), got {alpha}")
    if not constraints:
        raise TreematchError("constraint list is empty")
    nodes = sorted(set().union(*constraints))

    if policy == "k-plus-one":
        levels = {
            i: alpha / max(len(s) for s in constraints if i in s) for i in nodes
        }
    elif policy == "max-min":
        levels = {i: 0.0 for i in nodes}
        active = set(nodes) if alpha > 0 else set()
        while active:
            steps = []
            for s in constraints:
                grow = len(s & active)
                if grow:
                    slack = alpha - sum(levels[i] for i in s)
                    steps.append((slack / grow, s))
            delta = min(st for st, _ in steps)
            if delta <= 0:
                raise InfeasibleAllocationError(
                    "water-filling stalled before covering every node"
                )
            for i in active:
                levels[i] += delta
            for st, s in steps:
                if st <= delta + 1e-15:
                    active -= s
    else:
        raise TreematchError(f"unknown allocation policy {policy!r}")

    allocation = AlphaAllocation(
        alpha=alpha,
        levels=levels,
        constraints=tuple(constraints),
    )
    allocation.check()
    return allocation


class TestStatus(str, Enum):
    __test__ = False  # not a pytest class

    REJECTED = "rejected"
    NOT_REJECTED = "not_rejected"
    NOT_TESTED = "not_tested"


@dataclass
class TestDecision:
    """Outcome of the ordered procedure: a status per node, p-values where tested."""

    __test__ = False  # not a pytest class

    status: dict[int, TestStatus] = field(default_factory=dict)
    p_values: dict[int, float] = field(default_factory=dict)

    def tested(self) -> set[int]:
        return set(self.p_values)

    def rejected(self) -> set[int]:
        return {i for i, s in self.status.items() if s is TestStatus.REJECTED}


PValueProvider = Callable[[int, float, float], float]


def run_ordered_testing(
    tree: ExposureTree,
    allocation: AlphaAllocation,
    pvalue_provider: PValueProvider,
    testable: Optional[Callable[[int], bool]] = None,
) -> TestDecision:
    """Breadth-first gated testing: a node is tested iff its parent was rejected.

    Rejection requires strictly p < level.  ``testable`` lets the caller veto
    nodes (e.g. a failed match); a vetoed node and its subtree stay
    NOT_TESTED.  A provider exception aborts the run; the partial decisions
    ride on the raised :class:`OrderedTestingError`.
    """
    decision = TestDecision(
        status={n.id: TestStatus.NOT_TESTED for n in tree.nodes}
    )
    for node_id in tree.breadth_first():
        node = tree.node(node_id)
        if node.parent is not None:
            if decision.status[node.parent] is not TestStatus.REJECTED:
                continue
        if testable is not None and not testable(node_id):
            continue
        level = allocation.level(node_id)
        try:
            p = float(pvalue_provider(node_id, node.tau0, level))
        except Exception as exc:  # surface with partial decisions attached
            raise OrderedTestingError(
                f"p-value provider failed at node {node_id} ({node.label!r}): {exc}",
                partial=decision,
            ) from exc
        decision.p_values[node_id] = p
        decision.status[node_id] = (
            TestStatus.REJECTED if p < level else TestStatus.NOT_REJECTED
        )
    return decision
