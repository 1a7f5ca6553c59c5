"""Predicate rules, the abstaining rule expert, coverage/usage metrics, and the rule grammar.

The rule expert answers with a one-hot class vector when at least one active
rule covers an instance (picking the rule whose stored anchor sample is
nearest) and abstains with an all-zero vector otherwise. Rules evaluate on
raw feature values so they stay human-readable; only the anchor distance
uses standardized coordinates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    CATEGORICAL,
    NUMERIC,
    Dataset,
    FeatureSchema,
    Standardizer,
    encode_dataset,
    format_value,
    instance_from_mapping,
    instance_to_mapping,
)
from .models import DiffClassifier

OP_LE = "le"
OP_GT = "gt"
OP_EQ = "eq"
OP_RANGE = "range"


class RuleParseError(ValueError):
    """Base class for failures to parse or validate canonical rule text."""


class UnknownFeatureError(RuleParseError):
    pass


class UnknownOperatorError(RuleParseError):
    pass


class UnknownCategoryError(RuleParseError):
    pass


class MalformedNumberError(RuleParseError):
    pass


@dataclass(frozen=True)
class Predicate:
    """One condition on a single feature, in raw (unstandardized) units.

    LE and GT carry ``threshold``; RANGE carries ``low``/``high`` with the
    left-open right-closed convention low < x <= high; EQ carries
    ``category``.
    """

    feature: str
    op: str
    threshold: float | None = None
    low: float | None = None
    high: float | None = None
    category: str | None = None

    def __post_init__(self):
        if self.op not in (OP_LE, OP_GT, OP_EQ, OP_RANGE):
            raise ValueError(f"unknown operator {self.op!r}")
        if self.op == OP_RANGE and not (self.low is not None and self.high is not None and self.low < self.high):
            raise ValueError("RANGE needs low < high")
        if self.op in (OP_LE, OP_GT) and self.threshold is None:
            raise ValueError(f"{self.op} needs a threshold")
        if self.op == OP_EQ and self.category is None:
            raise ValueError("EQ needs a category")

    def sort_key(self):
        vals = (
            self.threshold if self.threshold is not None else 0.0,
            self.low if self.low is not None else 0.0,
            self.high if self.high is not None else 0.0,
            self.category or "",
        )
        return (self.feature, self.op, *vals)


def validate_predicate(pred: Predicate, schema: FeatureSchema) -> None:
    """Check a predicate against the schema; raises a RuleParseError subclass."""
    try:
        j = schema.feature_index(pred.feature)
    except KeyError:
        raise UnknownFeatureError(f"unknown feature {pred.feature!r}") from None
    spec = schema.features[j]
    if pred.op == OP_EQ:
        if spec.kind != CATEGORICAL:
            raise UnknownOperatorError(f"== is not valid for numeric feature {pred.feature!r}")
        if pred.category not in spec.categories:
            raise UnknownCategoryError(f"unknown category {pred.category!r} for feature {pred.feature!r}")
    else:
        if spec.kind != NUMERIC:
            raise UnknownOperatorError(f"numeric operator on categorical feature {pred.feature!r}")


def predicate_holds(pred: Predicate, x: np.ndarray, schema: FeatureSchema) -> bool:
    j = schema.feature_index(pred.feature)
    v = x[j]
    if pred.op == OP_LE:
        return bool(v <= pred.threshold)
    if pred.op == OP_GT:
        return bool(v > pred.threshold)
    if pred.op == OP_RANGE:
        return bool(pred.low < v <= pred.high)
    return schema.features[j].categories[int(v)] == pred.category


def predicate_mask(pred: Predicate, X: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Vectorized predicate_holds over the rows of X."""
    j = schema.feature_index(pred.feature)
    col = X[:, j]
    if pred.op == OP_LE:
        return col <= pred.threshold
    if pred.op == OP_GT:
        return col > pred.threshold
    if pred.op == OP_RANGE:
        return (col > pred.low) & (col <= pred.high)
    k = schema.features[j].categories.index(pred.category)
    return col.astype(np.int64) == k


@dataclass
class Rule:
    """An if-then rule with its anchor sample and provenance."""

    rule_id: int
    predicates: tuple[Predicate, ...]
    class_index: int
    anchor: np.ndarray
    precision_estimate: float
    context: str = ""
    iteration: int = 0
    llm_adapted: bool = False
    active: bool = True

    def __post_init__(self):
        if not self.predicates:
            raise ValueError("a rule needs at least one predicate")
        self.anchor = np.asarray(self.anchor, dtype=np.float64)

    def canonical_key(self):
        return tuple(sorted(p.sort_key() for p in self.predicates))

    def copy(self) -> "Rule":
        return Rule(
            rule_id=self.rule_id,
            predicates=self.predicates,
            class_index=self.class_index,
            anchor=self.anchor.copy(),
            precision_estimate=self.precision_estimate,
            context=self.context,
            iteration=self.iteration,
            llm_adapted=self.llm_adapted,
            active=self.active,
        )


def covers(rule: Rule, x: np.ndarray, schema: FeatureSchema) -> bool:
    """True iff every predicate of the rule holds on the raw instance."""
    return all(predicate_holds(p, x, schema) for p in rule.predicates)


def rule_mask(rule: Rule, X: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    mask = np.ones(X.shape[0], dtype=bool)
    for p in rule.predicates:
        mask &= predicate_mask(p, X, schema)
    return mask


@dataclass
class RuleSet:
    """Ordered collection of rules with unique, stable ids."""

    rules: list[Rule] = field(default_factory=list)
    next_id: int = 0

    def add(
        self,
        predicates: tuple[Predicate, ...],
        class_index: int,
        anchor: np.ndarray,
        precision_estimate: float,
        iteration: int = 0,
        context: str = "",
    ) -> Rule:
        rule = Rule(
            rule_id=self.next_id,
            predicates=tuple(predicates),
            class_index=class_index,
            anchor=anchor,
            precision_estimate=precision_estimate,
            context=context,
            iteration=iteration,
        )
        self.rules.append(rule)
        self.next_id += 1
        return rule

    def get(self, rule_id: int) -> Rule | None:
        for r in self.rules:
            if r.rule_id == rule_id:
                return r
        return None

    def active_rules(self) -> list[Rule]:
        return [r for r in self.rules if r.active]

    def copy(self) -> "RuleSet":
        return RuleSet(rules=[r.copy() for r in self.rules], next_id=self.next_id)

    def __len__(self) -> int:
        return len(self.rules)


def anchor_distance(x: np.ndarray, u: np.ndarray, schema: FeatureSchema, standardizer: Standardizer) -> float:
    """Euclidean distance over standardized numerics plus a count of differing categoricals."""
    sq = 0.0
    hamming = 0.0
    for j, spec in enumerate(schema.features):
        if spec.kind == NUMERIC:
            diff = (x[j] - u[j]) / standardizer.std[j]
            sq += diff * diff
        else:
            hamming += 0.0 if int(x[j]) == int(u[j]) else 1.0
    return float(np.sqrt(sq) + hamming)


def _anchor_distances(rule: Rule, X: np.ndarray, schema: FeatureSchema, standardizer: Standardizer) -> np.ndarray:
    sq = np.zeros(X.shape[0])
    hamming = np.zeros(X.shape[0])
    for j, spec in enumerate(schema.features):
        if spec.kind == NUMERIC:
            diff = (X[:, j] - rule.anchor[j]) / standardizer.std[j]
            sq += diff * diff
        else:
            hamming += (X[:, j].astype(np.int64) != int(rule.anchor[j])).astype(np.float64)
    return np.sqrt(sq) + hamming


def nearest_covering_rule(
    rs: RuleSet, x: np.ndarray, schema: FeatureSchema, standardizer: Standardizer
) -> Rule | None:
    """The active covering rule whose anchor is nearest to x; None if all abstain."""
    best = None
    best_dist = np.inf
    for rule in sorted(rs.rules, key=lambda r: r.rule_id):
        if not rule.active or not covers(rule, x, schema):
            continue
        d = anchor_distance(x, rule.anchor, schema, standardizer)
        if d < best_dist:  # ties keep the earlier (lower-id) rule
            best, best_dist = rule, d
    return best


def rule_predict(rs: RuleSet, x: np.ndarray, schema: FeatureSchema, standardizer: Standardizer) -> np.ndarray:
    """One-hot prediction of the nearest-anchor covering rule, or all zeros (abstain)."""
    out = np.zeros(schema.n_classes)
    best = nearest_covering_rule(rs, x, schema, standardizer)
    if best is not None:
        out[best.class_index] = 1.0
    return out


def rule_predict_batch(
    rs: RuleSet, X: np.ndarray, schema: FeatureSchema, standardizer: Standardizer
) -> np.ndarray:
    """rule_predict over all rows of X, as an (N, C) matrix."""
    n = X.shape[0]
    out = np.zeros((n, schema.n_classes))
    active = sorted(rs.active_rules(), key=lambda r: r.rule_id)
    if not active:
        return out
    dist = np.full((len(active), n), np.inf)
    for i, rule in enumerate(active):
        mask = rule_mask(rule, X, schema)
        if mask.any():
            dist[i, mask] = _anchor_distances(rule, X, schema, standardizer)[mask]
    covered = np.isfinite(dist).any(axis=0)
    winners = dist.argmin(axis=0)  # first minimum wins: lowest id on ties
    classes = np.array([r.class_index for r in active])
    rows = np.flatnonzero(covered)
    out[rows, classes[winners[rows]]] = 1.0
    return out


def coverage(rs: RuleSet, data: Dataset) -> float:
    """Fraction of instances on which the rule expert does not abstain."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    covered = np.zeros(len(data), dtype=bool)
    for rule in rs.active_rules():
        covered |= rule_mask(rule, data.X, data.schema)
    return float(covered.mean())


def usage(gate: DiffClassifier, data: Dataset, standardizer: Standardizer) -> float:
    """Fraction of instances the gate routes to the rule expert (second output > 0.5)."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    probs = gate.forward(encode_dataset(data, standardizer))
    return float((probs[:, 1] > 0.5).mean())


def dedup(rs: RuleSet) -> RuleSet:
    """Deactivate later duplicates among active rules.

    Two active rules are duplicates when their canonicalized predicate sets
    and predicted classes both match; rules sharing predicates but not the
    class are contradictions, kept for the pruning phase to resolve.
    """
    out = rs.copy()
    seen = set()
    for rule in sorted(out.rules, key=lambda r: r.rule_id):
        if not rule.active:
            continue
        key = (rule.canonical_key(), rule.class_index)
        if key in seen:
            rule.active = False
        else:
            seen.add(key)
    return out


# -- canonical text grammar --------------------------------------------------

def _predicate_text(pred: Predicate) -> str:
    if pred.op == OP_LE:
        return f"{pred.feature} <= {format_value(pred.threshold)}"
    if pred.op == OP_GT:
        return f"{pred.feature} > {format_value(pred.threshold)}"
    if pred.op == OP_RANGE:
        return f"{pred.feature} in ({format_value(pred.low)}, {format_value(pred.high)}]"
    return f"{pred.feature} == {pred.category}"


def canonical_text(rule: Rule, schema: FeatureSchema) -> str:
    """Render a rule as `IF <pred> [AND <pred> ...] THEN <class>` in canonical order."""
    preds = sorted(rule.predicates, key=lambda p: p.sort_key())
    cond = " AND ".join(_predicate_text(p) for p in preds)
    return f"IF {cond} THEN {schema.classes[rule.class_index]}"


_RANGE_RE = re.compile(r"^(?P<f>.+?) in \((?P<a>[^,]+), (?P<b>[^\]]+)\]$")
_LE_RE = re.compile(r"^(?P<f>.+?) <= (?P<v>.+)$")
_GT_RE = re.compile(r"^(?P<f>.+?) > (?P<v>.+)$")
_EQ_RE = re.compile(r"^(?P<f>.+?) == (?P<v>.+)$")


def _parse_number(token: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise MalformedNumberError(f"malformed number {token.strip()!r}") from None


def _parse_predicate(text: str, schema: FeatureSchema) -> Predicate:
    text = text.strip()
    for bad in (" >= ", " < ", " != ", " = "):
        if bad in text:
            raise UnknownOperatorError(f"unsupported operator in {text!r}")
    m = _RANGE_RE.match(text)
    if m:
        pred = Predicate(
            feature=m.group("f").strip(),
            op=OP_RANGE,
            low=_parse_number(m.group("a")),
            high=_parse_number(m.group("b")),
        )
    else:
        m = _LE_RE.match(text)
        if m:
            pred = Predicate(m.group("f").strip(), OP_LE, threshold=_parse_number(m.group("v")))
        else:
            m = _GT_RE.match(text)
            if m:
                pred = Predicate(m.group("f").strip(), OP_GT, threshold=_parse_number(m.group("v")))
            else:
                m = _EQ_RE.match(text)
                if m:
                    pred = Predicate(m.group("f").strip(), OP_EQ, category=m.group("v").strip())
                else:
                    raise UnknownOperatorError(f"no recognizable operator in {text!r}")
    validate_predicate(pred, schema)
    return pred


def parse_rule(text: str, schema: FeatureSchema) -> tuple[tuple[Predicate, ...], int]:
    """Parse canonical rule text into (predicates, class index).

    Raises UnknownFeatureError / UnknownOperatorError / UnknownCategoryError /
    MalformedNumberError, all subclasses of RuleParseError.
    """
    text = text.strip()
    if not text.startswith("IF "):
        raise RuleParseError(f"rule text must start with 'IF ': {text!r}")
    body = text[3:]
    if " THEN " not in body:
        raise RuleParseError(f"rule text is missing ' THEN ': {text!r}")
    cond, label = body.rsplit(" THEN ", 1)
    label = label.strip()
    if label not in schema.classes:
        raise UnknownCategoryError(f"unknown class label {label!r}")
    parts = cond.split(" AND ")
    preds = tuple(_parse_predicate(p, schema) for p in parts)
    return preds, schema.classes.index(label)


# -- persistence ---------------------------------------------------------------

def ruleset_to_obj(rs: RuleSet, schema: FeatureSchema) -> list[dict]:
    out = []
    for r in sorted(rs.rules, key=lambda r: r.rule_id):
        out.append(
            {
                "id": r.rule_id,
                "text": canonical_text(r, schema),
                "class": schema.classes[r.class_index],
                "anchor": instance_to_mapping(schema, r.anchor),
                "precision": r.precision_estimate,
                "context": r.context,
                "iteration": r.iteration,
                "llm_adapted": r.llm_adapted,
                "active": r.active,
            }
        )
    return out


def ruleset_from_obj(obj: list[dict], schema: FeatureSchema) -> RuleSet:
    rules = []
    max_id = -1
    for entry in obj:
        preds, class_index = parse_rule(entry["text"], schema)
        if schema.classes[class_index] != entry["class"]:
            raise RuleParseError(f"rule {entry['id']}: text class and class field disagree")
        rule = Rule(
            rule_id=int(entry["id"]),
            predicates=preds,
            class_index=class_index,
            anchor=instance_from_mapping(schema, entry["anchor"]),
            precision_estimate=float(entry["precision"]),
            context=entry.get("context", ""),
            iteration=int(entry.get("iteration", 0)),
            llm_adapted=bool(entry.get("llm_adapted", False)),
            active=bool(entry.get("active", True)),
        )
        rules.append(rule)
        max_id = max(max_id, rule.rule_id)
    return RuleSet(rules=rules, next_id=max_id + 1)
