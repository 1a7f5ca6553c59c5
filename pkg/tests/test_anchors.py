from itertools import combinations

import numpy as np
import pytest

from rulemix.anchors import (
    AnchorConfig,
    EmptySupportError,
    candidate_predicates,
    find_anchor,
    make_bins,
    perturb,
    precision,
)
from rulemix.data import Dataset, FeatureSchema, FeatureSpec, encode, fit_standardizer
from rulemix.models import DiffClassifier
from rulemix.rules import OP_EQ, OP_GT, OP_LE, OP_RANGE, covers


def numeric_schema(names, classes=("neg", "pos")):
    return FeatureSchema(
        features=tuple(FeatureSpec(n, "numeric") for n in names),
        target_name="y",
        classes=classes,
    )


def sign_classifier(schema, standardizer, feature_index):
    """Logistic model whose prediction is the sign of one standardized feature."""
    f = DiffClassifier(schema.encoded_dim(), 2, seed=0)
    f.set_flat(np.zeros(f.n_params))
    f.weights[0][feature_index, 1] = 25.0
    return f


def symmetric_dataset(schema, n_rep=4, seed=0):
    """Each feature takes values +-{1..4}; labels are the sign of feature 0."""
    rng = np.random.default_rng(seed)
    base = np.array([-4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0])
    cols = [np.tile(base, n_rep)]
    for _ in range(schema.n_features - 1):
        cols.append(rng.permutation(np.tile(base, n_rep)))
    X = np.stack(cols, axis=1)
    y = (X[:, 0] > 0).astype(np.int64)
    return Dataset(schema, X, y)


class TestMakeBins:
    def test_quartiles_of_1_to_100(self):
        schema = numeric_schema(["v"])
        ds = Dataset(schema, np.arange(1.0, 101.0)[:, None], np.array([0, 1] * 50))
        bins = make_bins(ds, n_bins=4)
        np.testing.assert_allclose(bins.cuts["v"], [25.75, 50.5, 75.25])

    def test_constant_feature_zero_cuts(self):
        schema = numeric_schema(["v"])
        ds = Dataset(schema, np.full((8, 1), 3.0), np.array([0, 1] * 4))
        bins = make_bins(ds, n_bins=4)
        assert bins.cuts["v"].size == 0

    def test_two_distinct_values_collapse_to_one_cut(self):
        schema = numeric_schema(["v"])
        ds = Dataset(schema, np.array([[0.0], [0.0], [1.0], [1.0]]), np.array([0, 0, 1, 1]))
        bins = make_bins(ds, n_bins=4)
        assert bins.cuts["v"].size == 1

    def test_cuts_strictly_increasing(self):
        schema = numeric_schema(["a", "b"])
        rng = np.random.default_rng(2)
        X = np.column_stack([rng.normal(size=60), rng.integers(0, 3, size=60).astype(float)])
        ds = Dataset(schema, X, rng.integers(0, 2, size=60))
        bins = make_bins(ds, n_bins=4)
        for cuts in bins.cuts.values():
            assert np.all(np.diff(cuts) > 0)

    def test_categoricals_have_no_bins(self, mixed_dataset):
        bins = make_bins(mixed_dataset, n_bins=4)
        assert "workclass" not in bins.cuts


class TestCandidatePredicates:
    @pytest.fixture
    def ages(self):
        schema = numeric_schema(["age"])
        ds = Dataset(schema, np.arange(1.0, 101.0)[:, None], np.array([0, 1] * 50))
        return schema, make_bins(ds, n_bins=4)

    def test_leftmost_bin_is_le(self, ages):
        schema, bins = ages
        (pred,) = candidate_predicates(np.array([22.0]), bins, schema)
        assert pred.op == OP_LE and pred.threshold == 25.75

    def test_rightmost_bin_is_gt(self, ages):
        schema, bins = ages
        (pred,) = candidate_predicates(np.array([90.0]), bins, schema)
        assert pred.op == OP_GT and pred.threshold == 75.25

    def test_middle_bin_is_range(self, ages):
        schema, bins = ages
        (pred,) = candidate_predicates(np.array([40.0]), bins, schema)
        assert pred.op == OP_RANGE and (pred.low, pred.high) == (25.75, 50.5)

    def test_categorical_eq(self, mixed_dataset):
        bins = make_bins(mixed_dataset, n_bins=4)
        preds = candidate_predicates(np.array([40.0, 120.0, 0.0]), bins, mixed_dataset.schema)
        eq = [p for p in preds if p.op == OP_EQ]
        assert len(eq) == 1 and eq[0].category == "Private"

    def test_every_candidate_satisfied_by_x(self, mixed_dataset):
        bins = make_bins(mixed_dataset, n_bins=4)
        rng = np.random.default_rng(0)
        from conftest import random_instance

        for _ in range(50):
            x = random_instance(mixed_dataset.schema, rng, numeric_span=(0.0, 200.0))
            for pred in candidate_predicates(x, bins, mixed_dataset.schema):
                from rulemix.rules import predicate_holds

                assert predicate_holds(pred, x, mixed_dataset.schema)


class TestPerturb:
    def test_deterministic_for_seed(self, mixed_dataset):
        x = mixed_dataset.X[0]
        a = perturb(x, [], mixed_dataset, 1000, np.random.default_rng(7))
        b = perturb(x, [], mixed_dataset, 1000, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_free_features_draw_from_marginal(self, mixed_dataset):
        x = mixed_dataset.X[0]
        Z = perturb(x, [], mixed_dataset, 5000, np.random.default_rng(1))
        for j in range(mixed_dataset.schema.n_features):
            assert set(np.unique(Z[:, j])) <= set(np.unique(mixed_dataset.X[:, j]))

    def test_singleton_bins_pin_constrained_slots(self):
        schema = numeric_schema(["v", "w"])
        X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
        ds = Dataset(schema, X, np.array([0, 1, 0, 1]))
        bins = make_bins(ds, n_bins=4)
        x = np.array([2.0, 3.0])
        fixed = candidate_predicates(x, bins, schema)
        Z = perturb(x, fixed, ds, 500, np.random.default_rng(3))
        np.testing.assert_array_equal(Z, np.tile(x, (500, 1)))

    def test_empty_support_raises(self, mixed_dataset):
        from rulemix.rules import Predicate

        pred = Predicate("age", OP_GT, threshold=1e9)
        with pytest.raises(EmptySupportError):
            perturb(np.array([2e9, 0.0, 0.0]), [pred], mixed_dataset, 100, np.random.default_rng(0))


class TestPrecision:
    def test_constant_classifier_has_precision_one(self, mixed_dataset, mixed_standardizer):
        f = DiffClassifier(mixed_dataset.schema.encoded_dim(), 2, seed=0)
        f.set_flat(np.zeros(f.n_params))
        f.biases[0][:] = [9.0, 0.0]
        cfg = AnchorConfig(n_samples=500)
        p = precision(
            [], mixed_dataset.X[0], f, cfg, mixed_dataset, mixed_standardizer,
            np.random.default_rng(0),
        )
        assert p == 1.0

    def test_threshold_toy_brute_force(self):
        # sign classifier on v; empty predicate set ~ P(v > 0), fixed bin -> 1.0
        schema = numeric_schema(["v"])
        ds = symmetric_dataset(schema, n_rep=8)
        st = fit_standardizer(ds)
        f = sign_classifier(schema, st, 0)
        bins = make_bins(ds, n_bins=4)
        x = np.array([1.0])
        cfg = AnchorConfig(n_samples=20000)
        fixed = candidate_predicates(x, bins, schema)
        assert fixed[0].op == OP_RANGE and fixed[0].low == 0.0
        p_fixed = precision(fixed, x, f, cfg, ds, st, np.random.default_rng(5))
        assert p_fixed == 1.0
        p_free = precision([], x, f, cfg, ds, st, np.random.default_rng(5))
        # brute force over the empirical marginal: exactly half the values are positive
        assert p_free == pytest.approx(0.5, abs=0.02)

    def test_monotone_within_mc_noise(self):
        schema = numeric_schema(["a", "b", "c"])
        ds = symmetric_dataset(schema, n_rep=4, seed=1)
        st = fit_standardizer(ds)
        f = sign_classifier(schema, st, 0)
        bins = make_bins(ds, n_bins=4)
        x = ds.X[np.argmax(ds.X[:, 0] == 1.0)]
        cfg = AnchorConfig(n_samples=10000)
        cands = candidate_predicates(x, bins, schema)
        rng = np.random.default_rng(11)
        noise = 2.0 / np.sqrt(cfg.n_samples)
        for r in range(len(cands)):
            for subset in combinations(range(len(cands)), r):
                base = [cands[i] for i in subset]
                p0 = precision(base, x, f, cfg, ds, st, rng)
                for i in range(len(cands)):
                    if i in subset:
                        continue
                    p1 = precision(base + [cands[i]], x, f, cfg, ds, st, rng)
                    assert p1 >= p0 - noise


def exhaustive_best_subset(x, f, ds, bins, cfg, st, seed):
    """Oracle: smallest predicate subset reaching tau, ties by precision then order."""
    cands = candidate_predicates(x, bins, ds.schema)
    best = None
    for r in range(1, len(cands) + 1):
        for subset in combinations(range(len(cands)), r):
            preds = [cands[i] for i in subset]
            try:
                p = precision(preds, x, f, cfg, ds, st, np.random.default_rng([seed, *subset]))
            except EmptySupportError:
                continue
            if p >= cfg.tau and (best is None or p > best[1]):
                best = (subset, p)
        if best is not None:
            return [cands[i] for i in best[0]]
    return None


class TestFindAnchor:
    def test_constant_classifier_single_predicate(self, mixed_dataset, mixed_standardizer):
        f = DiffClassifier(mixed_dataset.schema.encoded_dim(), 2, seed=0)
        f.set_flat(np.zeros(f.n_params))
        f.biases[0][:] = [9.0, 0.0]
        bins = make_bins(mixed_dataset, n_bins=4)
        rule = find_anchor(
            mixed_dataset.X[0], f, mixed_dataset, bins, AnchorConfig(n_samples=500),
            mixed_standardizer, np.random.default_rng(0),
        )
        assert len(rule.predicates) == 1
        assert rule.precision_estimate == 1.0
        assert rule.class_index == 0

    def test_single_determining_feature_matches_exhaustive_oracle(self):
        schema = numeric_schema(["a", "b"])
        ds = symmetric_dataset(schema, n_rep=6, seed=3)
        st = fit_standardizer(ds)
        f = sign_classifier(schema, st, 0)
        bins = make_bins(ds, n_bins=4)
        cfg = AnchorConfig(tau=0.9, n_samples=10000)
        x = ds.X[np.argmax(ds.X[:, 0] == 2.0)]
        rule = find_anchor(x, f, ds, bins, cfg, st, np.random.default_rng(2))
        oracle = exhaustive_best_subset(x, f, ds, bins, cfg, st, seed=77)
        assert oracle is not None
        assert {p.sort_key() for p in rule.predicates} == {p.sort_key() for p in oracle}
        assert rule.predicates[0].feature == "a"

    def test_returned_rule_covers_x(self, mixed_dataset, mixed_standardizer):
        rng = np.random.default_rng(8)
        f = DiffClassifier(mixed_dataset.schema.encoded_dim(), 2, hidden=(8,), seed=5)
        bins = make_bins(mixed_dataset, n_bins=4)
        cfg = AnchorConfig(n_samples=300)
        for i in range(len(mixed_dataset)):
            rule = find_anchor(
                mixed_dataset.X[i], f, mixed_dataset, bins, cfg, mixed_standardizer,
                np.random.default_rng([9, i]),
            )
            assert covers(rule, mixed_dataset.X[i], mixed_dataset.schema)
            assert 0.0 <= rule.precision_estimate <= 1.0

    def test_deterministic_for_seed(self, mixed_dataset, mixed_standardizer):
        f = DiffClassifier(mixed_dataset.schema.encoded_dim(), 2, hidden=(8,), seed=5)
        bins = make_bins(mixed_dataset, n_bins=4)
        cfg = AnchorConfig(n_samples=400)
        r1 = find_anchor(
            mixed_dataset.X[1], f, mixed_dataset, bins, cfg, mixed_standardizer,
            np.random.default_rng(123),
        )
        r2 = find_anchor(
            mixed_dataset.X[1], f, mixed_dataset, bins, cfg, mixed_standardizer,
            np.random.default_rng(123),
        )
        assert [p.sort_key() for p in r1.predicates] == [p.sort_key() for p in r2.predicates]
        assert r1.precision_estimate == r2.precision_estimate
        assert r1.class_index == r2.class_index


class TestConfig:
    def test_tau_bounds(self):
        with pytest.raises(ValueError):
            AnchorConfig(tau=0.0)
        with pytest.raises(ValueError):
            AnchorConfig(tau=1.2)

    def test_min_samples(self):
        with pytest.raises(ValueError):
            AnchorConfig(n_samples=50)
