import numpy as np
import pytest

from rulemix.data import Dataset, FeatureSchema, FeatureSpec, fit_standardizer


@pytest.fixture
def num_schema():
    return FeatureSchema(
        features=(
            FeatureSpec("glucose", "numeric"),
            FeatureSpec("mass", "numeric"),
        ),
        target_name="outcome",
        classes=("negative", "positive"),
    )


@pytest.fixture
def mixed_schema():
    return FeatureSchema(
        features=(
            FeatureSpec("age", "numeric"),
            FeatureSpec("glucose", "numeric"),
            FeatureSpec("workclass", "categorical", ("Private", "Public", "Self")),
        ),
        target_name="income",
        classes=("low", "high"),
    )


@pytest.fixture
def mixed_dataset(mixed_schema):
    X = np.array(
        [
            [25.0, 90.0, 0],
            [40.0, 120.0, 1],
            [55.0, 160.0, 2],
            [33.0, 110.0, 0],
            [61.0, 145.0, 1],
            [29.0, 95.0, 0],
        ],
        dtype=np.float64,
    )
    y = np.array([0, 1, 1, 0, 1, 0])
    return Dataset(mixed_schema, X, y)


@pytest.fixture
def mixed_standardizer(mixed_dataset):
    return fit_standardizer(mixed_dataset)


def random_instance(schema, rng, numeric_span=(0.0, 200.0)):
    x = np.empty(schema.n_features)
    for j, spec in enumerate(schema.features):
        if spec.kind == "numeric":
            x[j] = rng.uniform(*numeric_span)
        else:
            x[j] = rng.integers(0, len(spec.categories))
    return x


def random_rule_fields(schema, rng, numeric_span=(0.0, 200.0)):
    """Random valid (predicates, class_index, anchor): the anchor satisfies every predicate."""
    from rulemix.rules import OP_EQ, OP_GT, OP_LE, OP_RANGE, Predicate

    anchor = random_instance(schema, rng, numeric_span)
    n_preds = rng.integers(1, schema.n_features + 1)
    chosen = rng.choice(schema.n_features, size=n_preds, replace=False)
    preds = []
    for j in sorted(chosen):
        spec = schema.features[j]
        if spec.kind == "categorical":
            preds.append(Predicate(spec.name, OP_EQ, category=spec.categories[int(anchor[j])]))
            continue
        v = anchor[j]
        op = rng.choice([OP_LE, OP_GT, OP_RANGE])
        gap = float(rng.uniform(0.5, 20.0))
        if op == OP_LE:
            preds.append(Predicate(spec.name, OP_LE, threshold=round(v + gap, 4)))
        elif op == OP_GT:
            preds.append(Predicate(spec.name, OP_GT, threshold=round(v - gap, 4)))
        else:
            lo = round(v - gap, 4)
            hi = round(v + float(rng.uniform(0.5, 20.0)), 4)
            preds.append(Predicate(spec.name, OP_RANGE, low=lo, high=hi))
    return tuple(preds), int(rng.integers(0, schema.n_classes)), anchor


def make_separable(n_per_class=40, seed=0):
    """Linearly separable 2-feature binary problem with a margin."""
    rng = np.random.default_rng(seed)
    a = rng.normal(loc=(-2.0, 0.0), scale=0.4, size=(n_per_class, 2))
    b = rng.normal(loc=(2.0, 0.0), scale=0.4, size=(n_per_class, 2))
    schema = FeatureSchema(
        features=(FeatureSpec("u", "numeric"), FeatureSpec("v", "numeric")),
        target_name="cls",
        classes=("a", "b"),
    )
    X = np.vstack([a, b])
    y = np.array([0] * n_per_class + [1] * n_per_class)
    return Dataset(schema, X, y)
