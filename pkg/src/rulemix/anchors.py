"""Local rule surrogates of a classifier via greedy Monte-Carlo anchor search.

Numeric features are discretized into quantile bins; the bin of the probed
sample, the category of each categorical feature, is the candidate predicate
vocabulary. Predicates are added greedily by the largest precision gain,
where precision is the fraction of constrained perturbations on which the
classifier repeats its prediction for the probed sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CATEGORICAL, NUMERIC, Dataset, FeatureSchema, Standardizer, encode, encode_matrix
from .models import DiffClassifier
from .rules import OP_EQ, OP_GT, OP_LE, OP_RANGE, Predicate, Rule, predicate_mask


class EmptySupportError(ValueError):
    """A fixed predicate is satisfied by zero training values."""


@dataclass(frozen=True)
class AnchorConfig:
    """Search knobs: precision threshold, Monte-Carlo budget, rule length cap."""

    tau: float = 0.90
    n_samples: int = 2000
    max_predicates: int | None = None  # None: one per feature
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.n_samples < 100:
            raise ValueError("n_samples must be >= 100")


@dataclass
class BinTable:
    """Per-numeric-feature cut points; consecutive cuts bound left-open bins."""

    cuts: dict[str, np.ndarray] = field(default_factory=dict)


def _round_sig(v: float, digits: int = 4) -> float:
    return float(f"{v:.{digits}g}")


def make_bins(train: Dataset, n_bins: int = 4) -> BinTable:
    """Quantile cut points per numeric feature, rounded to 4 significant digits.

    Duplicate quantiles collapse, and cuts that fall on or outside the
    column's min/max are dropped (a constant column therefore gets a single
    unbounded bin).
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    table = BinTable()
    qs = [k / n_bins for k in range(1, n_bins)]
    for j, spec in enumerate(train.schema.features):
        if spec.kind != NUMERIC:
            continue
        col = train.X[:, j]
        lo, hi = col.min(), col.max()
        cuts = []
        for q in qs:
            c = _round_sig(float(np.quantile(col, q)))
            if lo < c < hi and (not cuts or c > cuts[-1]):
                cuts.append(c)
        table.cuts[spec.name] = np.asarray(cuts)
    return table


def candidate_predicates(x: np.ndarray, bins: BinTable, schema: FeatureSchema) -> list[Predicate]:
    """The predicate of x on each feature: its numeric bin or its category.

    Numeric features whose bin table is empty (constant columns) contribute
    no predicate.
    """
    out = []
    for j, spec in enumerate(schema.features):
        if spec.kind == CATEGORICAL:
            out.append(Predicate(spec.name, OP_EQ, category=spec.categories[int(x[j])]))
            continue
        cuts = bins.cuts.get(spec.name, np.empty(0))
        if cuts.size == 0:
            continue
        v = x[j]
        if v <= cuts[0]:
            out.append(Predicate(spec.name, OP_LE, threshold=float(cuts[0])))
        elif v > cuts[-1]:
            out.append(Predicate(spec.name, OP_GT, threshold=float(cuts[-1])))
        else:
            i = int(np.searchsorted(cuts, v, side="left"))
            out.append(Predicate(spec.name, OP_RANGE, low=float(cuts[i - 1]), high=float(cuts[i])))
    return out


def perturb(
    x: np.ndarray,
    fixed: list[Predicate],
    train: Dataset,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw n raw instances around x: constrained slots resample from training
    values satisfying their predicate, free slots from the full empirical marginal."""
    schema = train.schema
    by_feature: dict[str, list[Predicate]] = {}
    for p in fixed:
        by_feature.setdefault(p.feature, []).append(p)
    out = np.empty((n, schema.n_features), dtype=np.float64)
    for j, spec in enumerate(schema.features):
        pool = train.X[:, j]
        preds = by_feature.get(spec.name)
        if preds:
            mask = np.ones(len(train), dtype=bool)
            for p in preds:
                mask &= predicate_mask(p, train.X, schema)
            pool = pool[mask]
            if pool.size == 0:
                raise EmptySupportError(f"no training values satisfy the predicate on {spec.name!r}")
        out[:, j] = rng.choice(pool, size=n, replace=True)
    return out


def precision(
    pred_set: list[Predicate],
    x: np.ndarray,
    f: DiffClassifier,
    cfg: AnchorConfig,
    train: Dataset,
    standardizer: Standardizer,
    rng: np.random.Generator,
) -> float:
    """Fraction of perturbations on which f repeats its prediction for x."""
    target = int(np.argmax(f.forward(encode(x, standardizer, train.schema))))
    Z = perturb(x, pred_set, train, cfg.n_samples, rng)
    probs = f.forward(encode_matrix(Z, standardizer, train.schema))
    return float((probs.argmax(axis=1) == target).mean())


def find_anchor(
    x: np.ndarray,
    f: DiffClassifier,
    train: Dataset,
    bins: BinTable,
    cfg: AnchorConfig,
    standardizer: Standardizer,
    rng: np.random.Generator,
) -> Rule:
    """Greedy anchor search around x.

    Grows the predicate set by the candidate with the greatest precision gain
    until the estimate reaches tau (with at least one predicate so the rule is
    non-vacuous), every feature is used, or the length cap is hit. Candidates
    with empty training support are skipped. The returned rule carries the
    achieved precision estimate even when it stays below tau, and always
    covers x; its id is unassigned (-1) until added to a rule set.
    """
    schema = train.schema
    candidates = candidate_predicates(x, bins, schema)
    if not candidates:
        raise ValueError("no candidate predicates exist for this instance")
    limit = cfg.max_predicates if cfg.max_predicates is not None else schema.n_features
    target = int(np.argmax(f.forward(encode(x, standardizer, schema))))

    chosen: list[Predicate] = []
    prec = 0.0
    while len(chosen) < limit and candidates:
        if chosen and prec >= cfg.tau:
            break
        best_i, best_prec = None, -1.0
        for i, cand in enumerate(candidates):
            try:
                p = precision(chosen + [cand], x, f, cfg, train, standardizer, rng)
            except EmptySupportError:
                continue
            if p > best_prec:
                best_i, best_prec = i, p
        if best_i is None:
            break
        chosen.append(candidates.pop(best_i))
        prec = best_prec

    if not chosen:
        raise ValueError("every candidate predicate had empty support")
    return Rule(
        rule_id=-1,
        predicates=tuple(chosen),
        class_index=target,
        anchor=np.asarray(x, dtype=np.float64).copy(),
        precision_estimate=prec,
    )
