"""Iterative rule discovery: entropy-guided sampling, anchor generation,
refinement, and constrained retraining.

Each iteration targets the part of the input space the gate still routes to
the black-box expert: candidate samples are drawn there, split between the
expert's most confident predictions (exploit) and its most uncertain ones
(explore). Every candidate yields one local anchor rule; duplicates are
dropped, the refiner reviews the whole set, and the gate is retrained under
the task-loss constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorConfig, BinTable, find_anchor, make_bins
from .data import Dataset, encode_dataset, fit_standardizer
from .mixture import (
    BaselineSnapshot,
    DbgdConfig,
    MixtureModel,
    SgdConfig,
    dbgd_epoch,
    init_train,
    mixture_predict_batch,
    mixture_task_loss,
)
from .models import DiffClassifier, predictive_entropy
from .refiner import RefinementUnavailableError, refine
from .rules import RuleSet, coverage, dedup, rule_predict_batch, usage

# seed-stream tags so every consumer draws from its own substream
_SEED_F, _SEED_G, _SEED_INIT, _SEED_DBGD, _SEED_ANCHOR = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class DiscoveryConfig:
    """Loop-level settings; nested configs own their phases."""

    iterations: int = 3
    b_exploit: int = 4
    b_explore: int = 4
    hidden: tuple[int, ...] = (50, 50)
    n_bins: int = 4
    seed: int = 0
    anchor: AnchorConfig = field(default_factory=AnchorConfig)
    dbgd: DbgdConfig = field(default_factory=DbgdConfig)
    init: SgdConfig = field(default_factory=SgdConfig)

    def __post_init__(self):
        if self.b_exploit + self.b_explore < 1:
            raise ValueError("need at least one candidate per iteration")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class IterationMetrics:
    """One metrics row; coverage/usage/accuracy are test-set quantities."""

    iteration: int
    train_loss: float
    test_loss: float
    test_acc: float
    rule_acc: float
    coverage: float
    usage: float
    n_rules: int

    def to_row(self) -> list:
        return [
            self.iteration,
            self.train_loss,
            self.test_loss,
            self.test_acc,
            self.rule_acc,
            self.coverage,
            self.usage,
            self.n_rules,
        ]


METRIC_COLUMNS = [
    "iteration",
    "train_loss",
    "test_loss",
    "test_acc",
    "rule_acc",
    "coverage",
    "usage",
    "n_rules",
]


@dataclass
class RunState:
    """Everything a finished (or in-progress) training run carries."""

    mixture: MixtureModel
    baseline: BaselineSnapshot
    bins: BinTable
    metrics: list[IterationMetrics] = field(default_factory=list)
    transcripts: list[dict] = field(default_factory=list)
    dbgd_trace_summaries: list[dict] = field(default_factory=list)


def select_candidates(
    m: MixtureModel, train: Dataset, b_exploit: int, b_explore: int
) -> list[int]:
    """Indices of rule-discovery seeds among instances not served by the rule expert.

    Eligible are instances the gate keeps on the black-box side (g2 <= 0.5)
    or on which every rule abstains. Of those, the b_exploit lowest-entropy
    and b_explore highest-entropy instances under the expert's prediction are
    returned (all of them when fewer are eligible); an empty list signals
    saturation.
    """
    Xe = encode_dataset(train, m.standardizer)
    g_probs = m.g.forward(Xe)
    R = rule_predict_batch(m.rules, train.X, m.schema, m.standardizer)
    eligible = np.flatnonzero((g_probs[:, 1] <= 0.5) | (R.sum(axis=1) == 0.0))
    if eligible.size == 0:
        return []
    ent = predictive_entropy(m.f.forward(Xe[eligible]))
    order = eligible[np.argsort(ent, kind="stable")]
    exploit = order[:b_exploit]
    rest = order[b_exploit:]
    explore = rest[rest.size - b_explore :] if b_explore > 0 else rest[:0]
    return [int(i) for i in exploit] + [int(i) for i in explore]


def _compute_metrics(
    m: MixtureModel, iteration: int, train: Dataset, test: Dataset
) -> IterationMetrics:
    R_train = rule_predict_batch(m.rules, train.X, m.schema, m.standardizer)
    train_loss = mixture_task_loss(m, train, R_train)

    R_test = rule_predict_batch(m.rules, test.X, m.schema, m.standardizer)
    probs = mixture_predict_batch(m, test.X, R_test)
    picked = np.maximum(probs[np.arange(len(test)), test.y], 1e-12)
    test_loss = float(-np.log(picked).mean())
    test_acc = float((probs.argmax(axis=1) == test.y).mean())

    fired = R_test.sum(axis=1) == 1.0
    if fired.any():
        rule_acc = float((R_test[fired].argmax(axis=1) == test.y[fired]).mean())
    else:
        rule_acc = 0.0

    return IterationMetrics(
        iteration=iteration,
        train_loss=train_loss,
        test_loss=test_loss,
        test_acc=test_acc,
        rule_acc=rule_acc,
        coverage=coverage(m.rules, test),
        usage=usage(m.g, test, m.standardizer),
        n_rules=len(m.rules.active_rules()),
    )


def _summarize_traces(iteration: int, traces) -> list[dict]:
    out = []
    for t in traces:
        out.append(
            {
                "iteration": iteration,
                "phi": t.phi,
                "lambda_t": t.lambda_t,
                "i_dot_t": float(t.grad_int @ t.grad_task),
                "t_norm_sq": float(t.grad_task @ t.grad_task),
                "covered": t.covered,
            }
        )
    return out


def discovery_iteration(
    state: RunState,
    iteration: int,
    train: Dataset,
    test: Dataset,
    cfg: DiscoveryConfig,
    refiner_client=None,
    strict_refiner: bool = False,
) -> bool:
    """Run one iteration; returns False when the loop saturated (no candidates).

    New anchor rules are generated for the selected seeds, duplicates are
    deactivated, the refiner (when present) adapts and prunes the whole
    active set (a refiner failure degrades to the unrefined set unless
    strict_refiner is set), and the gate/expert pair is retrained under the
    constraint. Metrics are appended in every case.
    """
    m = state.mixture
    candidates = select_candidates(m, train, cfg.b_exploit, cfg.b_explore)

    for idx in candidates:
        rng = np.random.default_rng([cfg.seed, _SEED_ANCHOR, int(idx)])
        found = find_anchor(
            train.X[idx], m.f, train, state.bins, cfg.anchor, m.standardizer, rng
        )
        m.rules.add(
            predicates=found.predicates,
            class_index=found.class_index,
            anchor=found.anchor,
            precision_estimate=found.precision_estimate,
            iteration=iteration,
        )
    m.rules = dedup(m.rules)

    if refiner_client is not None and m.rules.active_rules():
        try:
            refined, transcript = refine(m.rules, m.schema, refiner_client)
            m.rules = dedup(refined)
            state.transcripts.append({"iteration": iteration, **transcript.to_dict()})
        except RefinementUnavailableError as exc:
            if strict_refiner:
                raise
            state.transcripts.append({"iteration": iteration, "error": str(exc)})

    rng_dbgd = np.random.default_rng([cfg.seed, _SEED_DBGD, iteration])
    for _ in range(cfg.dbgd.epochs):
        traces = dbgd_epoch(m, train, state.baseline, cfg.dbgd, rng_dbgd)
        state.dbgd_trace_summaries.extend(_summarize_traces(iteration, traces))

    state.metrics.append(_compute_metrics(m, iteration, train, test))
    return bool(candidates)


def run(
    train: Dataset,
    test: Dataset,
    cfg: DiscoveryConfig,
    refiner_client=None,
    strict_refiner: bool = False,
) -> RunState:
    """Full training: unconstrained initialization, then the discovery loop.

    The loop ends early once an iteration finds no eligible candidates
    (saturation); metrics row 0 describes the freshly initialized state.
    """
    if train.schema is not test.schema and train.schema != test.schema:
        raise ValueError("train and test must share one schema")
    standardizer = fit_standardizer(train)
    dim = train.schema.encoded_dim()
    f = DiffClassifier(dim, train.schema.n_classes, cfg.hidden, seed=_seed(cfg.seed, _SEED_F))
    g = DiffClassifier(dim, 2, cfg.hidden, seed=_seed(cfg.seed, _SEED_G))
    baseline = init_train(
        f, train, standardizer, cfg.init, np.random.default_rng([cfg.seed, _SEED_INIT])
    )
    mixture = MixtureModel(
        f=f, g=g, rules=RuleSet(), schema=train.schema, standardizer=standardizer
    )
    state = RunState(mixture=mixture, baseline=baseline, bins=make_bins(train, cfg.n_bins))
    state.metrics.append(_compute_metrics(mixture, 0, train, test))

    for it in range(1, cfg.iterations + 1):
        progressed = discovery_iteration(
            state, it, train, test, cfg, refiner_client, strict_refiner
        )
        if not progressed:
            break
    return state


def _seed(seed: int, tag: int) -> int:
    # DiffClassifier derives its own substream; combine loop seed and role tag
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])
