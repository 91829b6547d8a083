"""Cohort ingestion, covariate and outcome construction, and exposure
assignment over the activity hierarchy.

Input is one delimited-text row per subject with an ``id`` column, an
``activities`` column (semicolon-separated names inside the field), one
column per raw covariate and one per raw outcome source.  Covariates follow
a declared schema: continuous values may be median-imputed with a
missingness indicator, categorical values map onto declared levels with an
explicit ``Missing`` level, and recorded household-income midpoints turn
into empirical quintiles.  Outcome constructors cover direct numeric
columns, the good/fair-poor dichotomy of self-rated health, and the nine-item
depression-questionnaire total.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import yaml

from .errors import (
    DuplicateKeyError,
    ParseError,
    SchemaError,
    TreematchError,
)
from .hypotree import ExposureTree

MISSING_LEVEL = "Missing"

# Recorded household-income interval midpoints: 5000, 15000, ..., 95000
# for the ten 10k-wide brackets, then 105000 for everything above 100k.
INCOME_MIDPOINTS = tuple(5000 + 10000 * i for i in range(10)) + (105000,)

KIND_CONTINUOUS = "continuous"
KIND_CATEGORICAL = "categorical"
KIND_QUINTILE = "quintile"


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class CovariateEntry:
    """One covariate declaration.

    ``missing``: for continuous entries, ``impute_median`` (cohort median
    plus an indicator column) or ``forbid``; for categorical entries,
    ``coerce`` (blank or unknown tokens become the Missing level) or
    ``strict`` (unknown tokens are an error, blanks still become Missing).
    """

    name: str
    kind: str
    levels: tuple = ()
    missing: str = ""

    def __post_init__(self):
        if self.kind not in (KIND_CONTINUOUS, KIND_CATEGORICAL, KIND_QUINTILE):
            raise SchemaError(f"{self.name}: unknown covariate kind {self.kind!r}")
        default = "impute_median" if self.kind == KIND_CONTINUOUS else "coerce"
        object.__setattr__(self, "missing", self.missing or default)
        if self.kind == KIND_CONTINUOUS and self.missing not in ("impute_median", "forbid"):
            raise SchemaError(f"{self.name}: bad missing policy {self.missing!r}")
        if self.kind == KIND_CATEGORICAL:
            if len(self.levels) < 2:
                raise SchemaError(f"{self.name}: categorical entries need >= 2 levels")
            if self.missing not in ("coerce", "strict"):
                raise SchemaError(f"{self.name}: bad missing policy {self.missing!r}")
        object.__setattr__(self, "levels", tuple(self.levels))


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate declarations; the order fixes column order downstream."""

    entries: tuple

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(names) != len(set(names)):
            raise SchemaError("covariate names must be unique")
        object.__setattr__(self, "entries", tuple(self.entries))

    def names(self) -> list:
        return [e.name for e in self.entries]

    def entry(self, name: str) -> CovariateEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise SchemaError(f"unknown covariate {name!r}")

    @staticmethod
    def from_config(raw: Sequence[Mapping]) -> "CovariateSchema":
        entries = []
        for item in raw:
            entries.append(
                CovariateEntry(
                    name=str(item["name"]),
                    kind=str(item["kind"]),
                    levels=tuple(item.get("levels", ())),
                    missing=str(item.get("missing", "")),
                )
            )
        return CovariateSchema(tuple(entries))


# ---------------------------------------------------------------------------
# sport classification


@dataclass(frozen=True)
class SportClassification:
    """Sports by body-contact class, plus the recognized non-sport activities."""

    collision: frozenset
    contact: frozenset
    non_contact: frozenset
    non_sport: frozenset = frozenset()

    def __post_init__(self):
        groups = {
            "collision": frozenset(self.collision),
            "contact": frozenset(self.contact),
            "non_contact": frozenset(self.non_contact),
            "non_sport": frozenset(self.non_sport),
        }
        for key, val in groups.items():
            object.__setattr__(self, key, val)
        names = list(groups)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                overlap = groups[a] & groups[b]
                if overlap:
                    raise TreematchError(
                        f"activities {sorted(overlap)} appear in both {a} and {b}"
                    )

    def sport_class(self, activity: str) -> Optional[str]:
        """Class name for a sport, None for a non-sport, error if unknown."""
        if activity in self.collision:
            return "collision"
        if activity in self.contact:
            return "contact"
        if activity in self.non_contact:
            return "non_contact"
        if activity in self.non_sport:
            return None
        raise TreematchError(f"activity {activity!r} is not classifiable")

    def known(self) -> frozenset:
        return self.collision | self.contact | self.non_contact | self.non_sport


def load_classification(path) -> SportClassification:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return SportClassification(
        collision=frozenset(raw.get("collision", ())),
        contact=frozenset(raw.get("contact", ())),
        non_contact=frozenset(raw.get("non_contact", ())),
        non_sport=frozenset(raw.get("non_sport", ())),
    )


def default_classification() -> SportClassification:
    """The shipped classification (collision / contact / non-contact table)."""
    ref = resources.files("treematch.data") / "sport_classification.yaml"
    with resources.as_file(ref) as path:
        return load_classification(path)


def default_tree() -> ExposureTree:
    """The shipped seven-node exposure hierarchy."""
    from .hypotree import load_tree

    ref = resources.files("treematch.data") / "exposure_tree.yaml"
    with resources.as_file(ref) as path:
        return load_tree(path)


# ---------------------------------------------------------------------------
# subjects and cohort


@dataclass(frozen=True)
class Subject:
    """One study unit: covariates, activity set, outcomes (possibly absent)."""

    id: str
    covariates: dict
    activities: frozenset
    outcomes: dict


@dataclass(frozen=True)
class OutcomeSpec:
    """How to build one analysis outcome from raw columns."""

    name: str
    construct: str = "identity"  # identity | health_dichotomy | phq9_total
    sources: tuple = ()
    role: str = "co-primary"  # co-primary | secondary

    def __post_init__(self):
        if self.construct not in ("identity", "health_dichotomy", "phq9_total"):
            raise SchemaError(f"{self.name}: unknown constructor {self.construct!r}")
        if self.construct == "phq9_total" and len(self.sources) != 9:
            raise SchemaError(f"{self.name}: phq9_total needs exactly 9 source columns")
        if self.construct in ("identity", "health_dichotomy") and len(self.sources) != 1:
            raise SchemaError(f"{self.name}: needs exactly one source column")
        if self.role not in ("co-primary", "secondary"):
            raise SchemaError(f"{self.name}: unknown role {self.role!r}")
        object.__setattr__(self, "sources", tuple(self.sources))


class Cohort:
    """Immutable collection of subjects under a fixed schema."""

    def __init__(self, subjects: Sequence[Subject], schema: CovariateSchema,
                 outcome_names: Sequence[str] = ()):
        self.subjects = tuple(subjects)
        self.schema = schema
        self.outcome_names = tuple(outcome_names)
        ids = [s.id for s in self.subjects]
        dupes = {i for i in ids if ids.count(i) > 1} if len(ids) != len(set(ids)) else set()
        if dupes:
            raise DuplicateKeyError(f"duplicate subject ids: {sorted(dupes)}")
        self._by_id = {s.id: s for s in self.subjects}

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def subject(self, subject_id) -> Subject:
        return self._by_id[subject_id]

    def ids(self) -> list:
        return [s.id for s in self.subjects]

    def outcome_vector(self, name: str) -> dict:
        return {
            s.id: s.outcomes[name]
            for s in self.subjects
            if name in s.outcomes and s.outcomes[name] is not None
        }

    def filter_complete(self, outcome_names: Iterable[str]) -> "Cohort":
        """Subjects with every named outcome present (study inclusion rule)."""
        names = list(outcome_names)
        kept = [
            s
            for s in self.subjects
            if all(s.outcomes.get(n) is not None for n in names)
        ]
        return Cohort(kept, self.schema, self.outcome_names)

    def continuous_medians(self) -> dict:
        """Cohort medians of observed continuous values (imputation targets)."""
        out = {}
        for e in self.schema.entries:
            if e.kind != KIND_CONTINUOUS:
                continue
            vals = [
                s.covariates[e.name]
                for s in self.subjects
                if s.covariates[e.name] is not None
            ]
            out[e.name] = float(np.median(vals)) if vals else 0.0
        return out

    def to_jsonable(self) -> dict:
        return {
            "schema": [
                {
                    "name": e.name,
                    "kind": e.kind,
                    "levels": list(e.levels),
                    "missing": e.missing,
                }
                for e in self.schema.entries
            ],
            "outcome_names": list(self.outcome_names),
            "subjects": [
                {
                    "id": s.id,
                    "covariates": s.covariates,
                    "activities": sorted(s.activities),
                    "outcomes": s.outcomes,
                }
                for s in self.subjects
            ],
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_jsonable(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_jsonable(raw: Mapping) -> "Cohort":
        schema = CovariateSchema.from_config(raw["schema"])
        subjects = [
            Subject(
                id=s["id"],
                covariates=dict(s["covariates"]),
                activities=frozenset(s["activities"]),
                outcomes=dict(s["outcomes"]),
            )
            for s in raw["subjects"]
        ]
        return Cohort(subjects, schema, tuple(raw.get("outcome_names", ())))


# ---------------------------------------------------------------------------
# scalar construction rules


def dichotomize_health(rating: int) -> int:
    """Self-rated health: excellent/very good/good -> 1, fair/poor -> 0."""
    if rating not in (1, 2, 3, 4, 5):
        raise TreematchError(f"self-rated health must be 1..5, got {rating!r}")
    return 1 if rating <= 3 else 0


def phq9_total(items: Sequence[int]) -> int:
    """Sum of the nine 0..3 item scores (range 0..27)."""
    items = list(items)
    if len(items) != 9:
        raise TreematchError(f"expected 9 items, got {len(items)}")
    for v in items:
        if v is None or v not in (0, 1, 2, 3):
            raise TreematchError(f"item scores must be integers 0..3, got {v!r}")
    return int(sum(items))


def income_quintile(recorded_income: float, cohort_incomes: Sequence[float]) -> int:
    """Quintile 1..5 of a recorded income midpoint within the cohort.

    Cut points are the empirical 20/40/60/80th percentiles (inverted-CDF
    quantiles) of the recorded values; a value tied with a cut point joins
    the lower quintile, so the eleven-point support yields the familiar
    unequal quintile counts.
    """
    if recorded_income not in INCOME_MIDPOINTS:
        raise TreematchError(
            f"income {recorded_income!r} is not a legal recorded midpoint"
        )
    arr = np.asarray(list(cohort_incomes), dtype=float)
    cuts = np.quantile(arr, [0.2, 0.4, 0.6, 0.8], method="inverted_cdf")
    return 1 + int(np.sum(recorded_income > cuts))


# ---------------------------------------------------------------------------
# ingestion


def load_cohort(
    source,
    schema: CovariateSchema,
    outcomes: Sequence[OutcomeSpec] = (),
    delimiter: str = ",",
) -> Cohort:
    """Read a delimited-text table into a cohort.

    ``source`` is a path or a text file object.  The header must contain
    ``id``, ``activities``, every schema covariate and every outcome source
    column.  Parsing failures carry the 1-based data row number.
    """
    if hasattr(source, "read"):
        return _load_rows(source, schema, outcomes, delimiter)
    with open(source, "r", encoding="utf-8", newline="") as fh:
        return _load_rows(fh, schema, outcomes, delimiter)


def _load_rows(fh, schema, outcomes, delimiter) -> Cohort:
    reader = csv.DictReader(fh, delimiter=delimiter)
    if reader.fieldnames is None:
        raise ParseError("input file is empty")
    header = set(reader.fieldnames)
    required = {"id", "activities"} | set(schema.names())
    for spec in outcomes:
        required |= set(spec.sources)
    missing_cols = required - header
    if missing_cols:
        raise ParseError(f"missing columns: {sorted(missing_cols)}")

    subjects = []
    seen = set()
    for row_no, row in enumerate(reader, start=1):
        if None in row or any(v is None for v in row.values()):
            raise ParseError(f"row {row_no}: wrong field count")
        sid = row["id"].strip()
        if not sid:
            raise ParseError(f"row {row_no}: blank id")
        if sid in seen:
            raise DuplicateKeyError(f"row {row_no}: duplicate id {sid!r}")
        seen.add(sid)

        activities = frozenset(
            a.strip() for a in row["activities"].split(";") if a.strip()
        )
        covariates = {}
        for entry in schema.entries:
            covariates[entry.name] = _parse_covariate(entry, row[entry.name], row_no)
        out_values = {}
        for spec in outcomes:
            out_values[spec.name] = _construct_outcome(spec, row, row_no)
        subjects.append(
            Subject(id=sid, covariates=covariates, activities=activities,
                    outcomes=out_values)
        )
    return Cohort(subjects, schema, tuple(spec.name for spec in outcomes))


def _parse_covariate(entry: CovariateEntry, raw: str, row_no: int):
    token = raw.strip()
    if entry.kind == KIND_CONTINUOUS:
        if token == "":
            if entry.missing == "forbid":
                raise SchemaError(f"row {row_no}: {entry.name} is missing")
            return None
        try:
            return float(token)
        except ValueError:
            raise ParseError(
                f"row {row_no}: {entry.name}={token!r} is not numeric"
            ) from None
    if entry.kind == KIND_QUINTILE:
        if token == "":
            return None
        try:
            value = float(token)
        except ValueError:
            raise ParseError(
                f"row {row_no}: {entry.name}={token!r} is not numeric"
            ) from None
        if value not in INCOME_MIDPOINTS:
            raise SchemaError(
                f"row {row_no}: {entry.name}={token!r} is not a legal midpoint"
            )
        return value
    # categorical
    if token == "":
        return MISSING_LEVEL
    if token in entry.levels or token == MISSING_LEVEL:
        return token
    if entry.missing == "strict":
        raise SchemaError(
            f"row {row_no}: {entry.name} has unknown level {token!r}"
        )
    return MISSING_LEVEL


def _construct_outcome(spec: OutcomeSpec, row: Mapping, row_no: int):
    raw = [row[c].strip() for c in spec.sources]
    if any(v == "" for v in raw):
        return None  # incomplete measurement: outcome absent for this subject
    try:
        values = [float(v) for v in raw]
    except ValueError:
        raise ParseError(
            f"row {row_no}: outcome {spec.name} has non-numeric source"
        ) from None
    if spec.construct == "identity":
        return values[0]
    if spec.construct == "health_dichotomy":
        return float(dichotomize_health(int(values[0])))
    return float(phq9_total([int(v) for v in values]))


def write_cohort_csv(cohort: Cohort, path, delimiter: str = ",") -> None:
    """Write a cohort back to delimited text (inverse of :func:`load_cohort`
    for identity outcomes).  Missing values become empty cells."""
    fields = ["id", "activities"] + cohort.schema.names() + list(cohort.outcome_names)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, delimiter=delimiter,
                                lineterminator="\n")
        writer.writeheader()
        for s in cohort:
            row = {"id": s.id, "activities": ";".join(sorted(s.activities))}
            for name in cohort.schema.names():
                v = s.covariates.get(name)
                row[name] = "" if v is None else (f"{v:g}" if isinstance(v, float) else str(v))
            for name in cohort.outcome_names:
                v = s.outcomes.get(name)
                row[name] = "" if v is None else f"{v:.10g}"
            writer.writerow(row)


# ---------------------------------------------------------------------------
# exposure assignment


EXPOSED = "exposed"
CONTROL = "control"
NOT_APPLICABLE = "not_applicable"


class ExposureAssignment:
    """Status of every subject at every tree node."""

    def __init__(self, status: dict, tree: ExposureTree):
        self._status = status  # node_id -> {subject_id: status}
        self.tree = tree

    def status(self, subject_id, node_id) -> str:
        return self._status[node_id][subject_id]

    def exposed_ids(self, node_id) -> list:
        return [i for i, st in self._status[node_id].items() if st == EXPOSED]

    def control_ids(self) -> list:
        root = self.tree.root
        return [i for i, st in self._status[root].items() if st == CONTROL]


def _predicate_holds(pred: Mapping, activities: frozenset,
                     cls: SportClassification) -> bool:
    kind = pred.get("type")
    sport_classes = {
        c for c in (cls.sport_class(a) for a in activities) if c is not None
    }
    if kind == "any_activity":
        return len(activities) > 0
    if kind == "any_sport_class":
        return bool(sport_classes & set(pred.get("classes", ()))) and bool(activities)
    if kind == "no_sport_class":
        return bool(activities) and not sport_classes & set(pred.get("classes", ()))
    raise TreematchError(f"unknown membership predicate {kind!r}")


def assign_exposures(
    cohort: Cohort, tree: ExposureTree, cls: SportClassification
) -> ExposureAssignment:
    """Exposure status per (subject, node).

    Subjects with no activities are the common control pool at every node.
    A subject is exposed at a node iff it is exposed at the parent and the
    node's membership predicate holds; everything else is not-applicable.
    Sibling predicates must not overlap on any exposed subject.
    """
    unknown = sorted(
        {a for s in cohort for a in s.activities} - cls.known()
    )
    if unknown:
        raise TreematchError(f"unclassifiable activities: {unknown}")
    for node in tree.nodes:
        if node.predicate is None:
            raise TreematchError(f"node {node.label!r} has no membership predicate")

    status: dict = {node.id: {} for node in tree.nodes}
    order = tree.breadth_first()
    for s in cohort:
        if not s.activities:
            for node_id in order:
                status[node_id][s.id] = CONTROL
            continue
        exposed_at = {}
        for node_id in order:
            node = tree.node(node_id)
            parent_ok = node.parent is None or exposed_at.get(node.parent, False)
            holds = parent_ok and _predicate_holds(node.predicate, s.activities, cls)
            exposed_at[node_id] = holds
            status[node_id][s.id] = EXPOSED if holds else NOT_APPLICABLE
        for node_id in order:
            kids = tree.children[node_id]
            if exposed_at[node_id] and len(kids) >= 2:
                hits = [c for c in kids if exposed_at[c]]
                if len(hits) > 1:
                    labels = [tree.node(c).label for c in hits]
                    raise TreematchError(
                        f"subject {s.id!r} matches overlapping sibling "
                        f"predicates {labels}"
                    )
    return ExposureAssignment(status, tree)


# ---------------------------------------------------------------------------
# design matrix


def encode_design_matrix(cohort: Cohort, schema: Optional[CovariateSchema] = None):
    """Numeric matrix plus column labels, in deterministic schema order.

    Continuous covariates pass through (missing values median-imputed, with
    a ``name:missing`` indicator column whenever the cohort has any missing
    rows).  Categorical and quintile covariates expand to one indicator per
    observed level, the Missing level last.
    """
    schema = schema or cohort.schema
    medians = cohort.continuous_medians()
    columns = []
    labels = []
    n = len(cohort)

    for entry in schema.entries:
        values = [s.covariates[entry.name] for s in cohort]
        if entry.kind == KIND_CONTINUOUS:
            observed = np.array(
                [medians[entry.name] if v is None else v for v in values], dtype=float
            )
            columns.append(observed)
            labels.append(entry.name)
            if any(v is None for v in values):
                columns.append(
                    np.array([1.0 if v is None else 0.0 for v in values])
                )
                labels.append(f"{entry.name}:missing")
            continue
        if entry.kind == KIND_QUINTILE:
            present = [v for v in values if v is not None]
            if not present:
                raise SchemaError(f"{entry.name}: no recorded income values")
            assigned = []
            for v in values:
                if v is None:
                    assigned.append(MISSING_LEVEL)
                else:
                    assigned.append(f"q{income_quintile(v, present)}")
            level_order = [f"q{i}" for i in range(1, 6)] + [MISSING_LEVEL]
            for level in level_order:
                if level in assigned:
                    columns.append(
                        np.array([1.0 if a == level else 0.0 for a in assigned])
                    )
                    labels.append(f"{entry.name}={level}")
            continue
        # categorical: observed levels in schema order, Missing last
        level_order = list(entry.levels) + [MISSING_LEVEL]
        observed_levels = [lv for lv in level_order if lv in values]
        for level in observed_levels:
            columns.append(np.array([1.0 if v == level else 0.0 for v in values]))
            labels.append(f"{entry.name}={level}")

    matrix = np.column_stack(columns) if columns else np.empty((n, 0))
    return matrix, labels
