"""Gated mixture of the black-box expert and the rule expert, trained under a
task-loss constraint with dynamic-barrier gradient descent.

The gate is trained to route instances to the rule expert (minimizing the
interpretability loss -log g2) subject to the mixture's task loss staying
within a (1 + epsilon) factor of the unconstrained baseline's. Per batch, the
task gradient is weighted by an adaptive coefficient: zero when the
constraint is comfortably satisfied, growing as the barrier is approached or
violated.

Gradients and losses here are batch means: the covered-only gradient sums
are divided by the batch size, which makes the task gradient w.r.t. the gate
exactly the gradient of the batch-mean constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FeatureSchema, Standardizer, encode, encode_dataset
from .models import PROB_FLOOR, DiffClassifier, DivergenceError, sgd_step
from .rules import RuleSet, rule_predict, rule_predict_batch


@dataclass(frozen=True)
class SgdConfig:
    """Plain SGD settings for the unconstrained initialization phase."""

    epochs: int = 150
    eta: float = 0.05
    batch_size: int = 32

    def __post_init__(self):
        if self.eta <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid SGD configuration")


@dataclass(frozen=True)
class DbgdConfig:
    """Constrained-optimization settings.

    epsilon is the allowed relative loss increase over the frozen baseline;
    alpha/beta weigh the two terms of the barrier; delta floors the squared
    task-gradient norm to keep the adaptive coefficient finite.
    """

    epsilon: float = 0.1
    alpha: float = 1.0
    beta: float = 1.0
    eta: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    delta: float = 1e-12

    def __post_init__(self):
        if self.epsilon < 0 or self.alpha <= 0 or self.beta <= 0 or self.delta <= 0:
            raise ValueError("invalid DBGD configuration")
        if self.eta <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid DBGD configuration")


@dataclass
class BaselineSnapshot:
    """Frozen copy of the unconstrained expert and its training loss."""

    model: DiffClassifier
    train_loss: float

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train_loss": self.train_loss}

    @classmethod
    def from_dict(cls, obj: dict) -> "BaselineSnapshot":
        return cls(DiffClassifier.from_dict(obj["model"]), float(obj["train_loss"]))


@dataclass
class DbgdStepTrace:
    """Per-batch record of the constrained update."""

    grad_int: np.ndarray
    grad_task: np.ndarray
    phi: float
    lambda_t: float
    covered: int


@dataclass
class MixtureModel:
    """Deployable unit: both experts, the rule set, and the encoding context."""

    f: DiffClassifier
    g: DiffClassifier
    rules: RuleSet
    schema: FeatureSchema
    standardizer: Standardizer
    hard_gate: bool = False

    def __post_init__(self):
        if self.g.output_dim != 2:
            raise ValueError("gate must have exactly 2 outputs")
        if self.f.output_dim != self.schema.n_classes:
            raise ValueError("expert output dimension must match the class count")


def mixture_predict(m: MixtureModel, x: np.ndarray) -> np.ndarray:
    """Blend expert and rule predictions by the gate, or fall back to the expert.

    When a rule fires, returns g1 * f(x) + g2 * r(x) (with the gate one-hot
    encoded first under hard gating); when the rule expert abstains, returns
    f(x) unchanged.
    """
    r = rule_predict(m.rules, x, m.schema, m.standardizer)
    xe = encode(x, m.standardizer, m.schema)
    pf = m.f.forward(xe)
    if r.sum() != 1.0:
        return pf
    pg = m.g.forward(xe)
    if m.hard_gate:
        hard = np.zeros_like(pg)
        hard[int(pg.argmax())] = 1.0
        pg = hard
    return pg[0] * pf + pg[1] * r


def mixture_predict_batch(m: MixtureModel, X: np.ndarray, R: np.ndarray | None = None) -> np.ndarray:
    """mixture_predict over rows of a raw instance matrix.

    R may carry precomputed rule-expert outputs (rule_predict_batch) to avoid
    re-evaluating a fixed rule set.
    """
    if R is None:
        R = rule_predict_batch(m.rules, X, m.schema, m.standardizer)
    Xe = np.stack([encode(X[i], m.standardizer, m.schema) for i in range(X.shape[0])])
    Pf = m.f.forward(Xe)
    out = Pf.copy()
    fired = R.sum(axis=1) == 1.0
    if fired.any():
        Pg = m.g.forward(Xe[fired])
        if m.hard_gate:
            hard = np.zeros_like(Pg)
            hard[np.arange(Pg.shape[0]), Pg.argmax(axis=1)] = 1.0
            Pg = hard
        out[fired] = Pg[:, :1] * Pf[fired] + Pg[:, 1:] * R[fired]
    return out


def interpretability_loss(g: DiffClassifier, x_encoded: np.ndarray) -> float:
    """-log of the gate's rule-side output, clamped below at 1e-12."""
    p2 = float(g.forward(x_encoded)[1])
    return float(-np.log(min(max(p2, PROB_FLOOR), 1.0)))


def mixture_task_loss(m: MixtureModel, data: Dataset, R: np.ndarray | None = None) -> float:
    """Mean cross entropy of the (soft-gated) mixture over a dataset."""
    probs = mixture_predict_batch(m, data.X, R)
    picked = np.maximum(probs[np.arange(len(data)), data.y], PROB_FLOOR)
    return float(-np.log(picked).mean())


def init_train(
    f: DiffClassifier,
    train: Dataset,
    standardizer: Standardizer,
    cfg: SgdConfig,
    rng: np.random.Generator,
) -> BaselineSnapshot:
    """Unconstrained SGD on cross entropy; returns the frozen baseline."""
    X = encode_dataset(train, standardizer)
    y = train.y
    n = len(train)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            probs = f.forward(X[idx])
            rows = np.arange(idx.size)
            dprobs = np.zeros_like(probs)
            dprobs[rows, y[idx]] = -1.0 / np.maximum(probs[rows, y[idx]], PROB_FLOOR) / idx.size
            grad = f.backprop_probs(X[idx], dprobs)
            if not np.all(np.isfinite(grad)):
                raise DivergenceError("non-finite gradient during initialization; lower eta")
            sgd_step(f, grad, cfg.eta)
    probs = f.forward(X)
    loss = float(-np.log(np.maximum(probs[np.arange(n), y], PROB_FLOOR)).mean())
    if not np.isfinite(loss):
        raise DivergenceError("initialization diverged; lower eta")
    return BaselineSnapshot(model=f.clone(), train_loss=loss)


def compute_phi(batch_loss: float, baseline_batch_loss: float, T: np.ndarray, cfg: DbgdConfig) -> float:
    """Barrier value: the smaller of the scaled constraint violation and beta * ||T||^2."""
    violation = cfg.alpha * (batch_loss - (1.0 + cfg.epsilon) * baseline_batch_loss)
    return float(min(violation, cfg.beta * float(T @ T)))


def compute_lambda(I: np.ndarray, T: np.ndarray, phi: float, delta: float) -> float:
    """Adaptive task-gradient weight: max((phi - I.T) / ||T||^2, 0).

    A squared task-gradient norm below delta short-circuits to 0 (no task
    direction to correct along).
    """
    tt = float(T @ T)
    if tt < delta:
        return 0.0
    return max((phi - float(I @ T)) / tt, 0.0)


def _mixture_forward(m: MixtureModel, Xe: np.ndarray, y: np.ndarray, R: np.ndarray):
    """Soft-gated mixture probabilities plus the pieces shared by all gradients."""
    rows = np.arange(Xe.shape[0])
    Pf = m.f.forward(Xe)
    Pg = m.g.forward(Xe)
    fired = R.sum(axis=1) == 1.0
    yhat = Pf.copy()
    if fired.any():
        yhat[fired] = Pg[fired, :1] * Pf[fired] + Pg[fired, 1:] * R[fired]
    y_prob = np.maximum(yhat[rows, y], PROB_FLOOR)
    loss = float(-np.log(y_prob).mean())
    return Pf, Pg, fired, y_prob, loss


def _batch_mixture_grads(
    m: MixtureModel,
    Xe: np.ndarray,
    y: np.ndarray,
    R: np.ndarray,
):
    """Forward the mixture on an encoded batch and assemble all gradient pieces.

    Returns (loss, dprobs_f, dprobs_int, dprobs_task, covered_count) where the
    dprobs are ready for backprop through f and g respectively; every term is
    normalized by the batch size.
    """
    nb = Xe.shape[0]
    rows = np.arange(nb)
    Pf, Pg, fired, y_prob, loss = _mixture_forward(m, Xe, y, R)

    # d(mean loss)/d(yhat_y); the expert sees it scaled by g1 on fired rows,
    # unscaled otherwise (multiplying by exactly 1.0 keeps the plain-SGD path
    # bitwise identical when no rule fires).
    dy = -1.0 / y_prob / nb
    dprobs_f = np.zeros_like(Pf)
    dprobs_f[rows, y] = dy * np.where(fired, Pg[:, 0], 1.0)

    dprobs_int = np.zeros_like(Pg)
    dprobs_task = np.zeros_like(Pg)
    if fired.any():
        fr = np.flatnonzero(fired)
        dprobs_int[fr, 1] = -1.0 / np.maximum(Pg[fr, 1], PROB_FLOOR) / nb
        dprobs_task[fr, 0] = Pf[fr, y[fr]] * dy[fr]
        dprobs_task[fr, 1] = R[fr, y[fr]] * dy[fr]
    return loss, dprobs_f, dprobs_int, dprobs_task, int(fired.sum())


def dbgd_epoch(
    m: MixtureModel,
    train: Dataset,
    baseline: BaselineSnapshot,
    cfg: DbgdConfig,
    rng: np.random.Generator,
) -> list[DbgdStepTrace]:
    """One epoch of constrained training; updates m in place and returns traces.

    Per batch the expert first descends the mixture task loss over all
    instances; then, at the fresh expert parameters, the gate takes the
    barrier-weighted step assembled from the covered instances only. The
    barrier compares the full training-set mixture loss against the frozen
    baseline scalar, so a globally violated constraint pulls the gate back in
    every batch. Batches without a covered instance leave the gate untouched.
    """
    Xe = encode_dataset(train, m.standardizer)
    R = rule_predict_batch(m.rules, train.X, m.schema, m.standardizer)
    n = len(train)
    traces = []
    perm = rng.permutation(n)
    for start in range(0, n, cfg.batch_size):
        idx = perm[start : start + cfg.batch_size]
        loss, dprobs_f, _, _, covered = _batch_mixture_grads(m, Xe[idx], train.y[idx], R[idx])
        if not np.isfinite(loss):
            raise DivergenceError("mixture loss diverged; lower eta")

        grad_f = m.f.backprop_probs(Xe[idx], dprobs_f)
        if not np.all(np.isfinite(grad_f)):
            raise DivergenceError("non-finite gradient during constrained training")
        sgd_step(m.f, grad_f, cfg.eta)

        if covered > 0:
            # gate gradients re-evaluated at the just-updated expert
            _, _, dprobs_int, dprobs_task, _ = _batch_mixture_grads(
                m, Xe[idx], train.y[idx], R[idx]
            )
            I = m.g.backprop_probs(Xe[idx], dprobs_int)
            T = m.g.backprop_probs(Xe[idx], dprobs_task)
            if not (np.all(np.isfinite(I)) and np.all(np.isfinite(T))):
                raise DivergenceError("non-finite gate gradient during constrained training")
            *_, full_loss = _mixture_forward(m, Xe, train.y, R)
            phi = compute_phi(full_loss, baseline.train_loss, T, cfg)
            lam = compute_lambda(I, T, phi, cfg.delta)
            sgd_step(m.g, I + lam * T, cfg.eta)
        else:
            I = np.zeros(m.g.n_params)
            T = np.zeros(m.g.n_params)
            phi = 0.0
            lam = 0.0
        traces.append(DbgdStepTrace(grad_int=I, grad_task=T, phi=phi, lambda_t=lam, covered=covered))
    return traces


def linear_combo_epoch(
    m: MixtureModel,
    train: Dataset,
    lambda_static: float,
    cfg: DbgdConfig,
    rng: np.random.Generator,
) -> MixtureModel:
    """Comparison optimizer: a fixed-weight sum of both objectives for the gate.

    The expert update matches dbgd_epoch; the gate descends
    l_int + lambda_static * l_task on covered instances.
    """
    if lambda_static < 0:
        raise ValueError("lambda_static must be >= 0")
    Xe = encode_dataset(train, m.standardizer)
    R = rule_predict_batch(m.rules, train.X, m.schema, m.standardizer)
    n = len(train)
    perm = rng.permutation(n)
    for start in range(0, n, cfg.batch_size):
        idx = perm[start : start + cfg.batch_size]
        loss, dprobs_f, dprobs_int, dprobs_task, covered = _batch_mixture_grads(
            m, Xe[idx], train.y[idx], R[idx]
        )
        if not np.isfinite(loss):
            raise DivergenceError("mixture loss diverged; lower eta")
        grad_f = m.f.backprop_probs(Xe[idx], dprobs_f)
        sgd_step(m.f, grad_f, cfg.eta)
        if covered > 0:
            I = m.g.backprop_probs(Xe[idx], dprobs_int)
            T = m.g.backprop_probs(Xe[idx], dprobs_task)
            sgd_step(m.g, I + lambda_static * T, cfg.eta)
    return m
