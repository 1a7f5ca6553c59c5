import numpy as np
import pytest

from conftest import random_instance, random_rule_fields
from rulemix.data import fit_standardizer
from rulemix.models import DiffClassifier
from rulemix.rules import (
    OP_EQ,
    OP_GT,
    OP_LE,
    OP_RANGE,
    MalformedNumberError,
    Predicate,
    Rule,
    RuleParseError,
    RuleSet,
    UnknownCategoryError,
    UnknownFeatureError,
    UnknownOperatorError,
    anchor_distance,
    canonical_text,
    coverage,
    covers,
    dedup,
    nearest_covering_rule,
    parse_rule,
    rule_predict,
    rule_predict_batch,
    ruleset_from_obj,
    ruleset_to_obj,
    usage,
)


def make_rule(rid, preds, cls, anchor, precision=1.0, **kw):
    return Rule(rid, tuple(preds), cls, np.asarray(anchor, float), precision, **kw)


class TestCovers:
    def test_le_is_inclusive(self, mixed_schema):
        r = make_rule(0, [Predicate("age", OP_LE, threshold=30.0)], 0, [30.0, 0.0, 0.0])
        assert covers(r, np.array([30.0, 999.0, 1.0]), mixed_schema)
        assert not covers(r, np.array([30.0001, 0.0, 1.0]), mixed_schema)

    def test_eq_category(self, mixed_schema):
        r = make_rule(0, [Predicate("workclass", OP_EQ, category="Private")], 0, [0, 0, 0])
        assert covers(r, np.array([1.0, 1.0, 0.0]), mixed_schema)
        assert not covers(r, np.array([1.0, 1.0, 1.0]), mixed_schema)

    def test_range_left_open(self, mixed_schema):
        r = make_rule(0, [Predicate("glucose", OP_RANGE, low=2.0, high=5.0)], 0, [0, 3, 0])
        assert not covers(r, np.array([0.0, 2.0, 0.0]), mixed_schema)
        assert covers(r, np.array([0.0, 5.0, 0.0]), mixed_schema)
        assert covers(r, np.array([0.0, 2.1, 0.0]), mixed_schema)

    def test_empty_predicates_forbidden(self):
        with pytest.raises(ValueError):
            Rule(0, (), 0, np.zeros(1), 1.0)


class TestAnchorDistance:
    def test_zero_on_self(self, mixed_dataset, mixed_standardizer):
        x = mixed_dataset.X[0]
        assert anchor_distance(x, x, mixed_dataset.schema, mixed_standardizer) == 0.0

    def test_categorical_difference_counts_one(self, mixed_dataset, mixed_standardizer):
        x = mixed_dataset.X[0].copy()
        u = x.copy()
        u[2] = (u[2] + 1) % 3
        assert anchor_distance(x, u, mixed_dataset.schema, mixed_standardizer) == 1.0

    def test_standardized_gap(self, mixed_dataset, mixed_standardizer):
        x = mixed_dataset.X[0].copy()
        u = x.copy()
        u[0] = x[0] + 3.0 * mixed_standardizer.std[0]
        d = anchor_distance(x, u, mixed_dataset.schema, mixed_standardizer)
        assert d == pytest.approx(3.0, abs=1e-12)

    def test_symmetric(self, mixed_schema, mixed_standardizer):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = random_instance(mixed_schema, rng)
            u = random_instance(mixed_schema, rng)
            dxy = anchor_distance(x, u, mixed_schema, mixed_standardizer)
            dyx = anchor_distance(u, x, mixed_schema, mixed_standardizer)
            assert dxy == pytest.approx(dyx, rel=1e-12)


class TestRulePredict:
    def test_abstain_is_all_zero(self, mixed_schema, mixed_standardizer):
        rs = RuleSet()
        rs.add((Predicate("age", OP_GT, threshold=100.0),), 1, np.array([150.0, 0, 0]), 1.0)
        out = rule_predict(rs, np.array([20.0, 0.0, 0.0]), mixed_schema, mixed_standardizer)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_single_covering_rule(self, mixed_schema, mixed_standardizer):
        rs = RuleSet()
        rs.add((Predicate("age", OP_LE, threshold=100.0),), 1, np.array([20.0, 0, 0]), 1.0)
        out = rule_predict(rs, np.array([30.0, 0.0, 0.0]), mixed_schema, mixed_standardizer)
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_nearest_anchor_wins(self, mixed_schema, mixed_dataset, mixed_standardizer):
        x = np.array([40.0, 120.0, 1.0])
        near = x.copy()
        near[0] += 0.1 * mixed_standardizer.std[0]
        far = x.copy()
        far[0] += 0.9 * mixed_standardizer.std[0]
        rs = RuleSet()
        rs.add((Predicate("age", OP_LE, threshold=200.0),), 0, far, 1.0)
        rs.add((Predicate("glucose", OP_LE, threshold=200.0),), 1, near, 1.0)
        out = rule_predict(rs, x, mixed_schema, mixed_standardizer)
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_tie_breaks_to_lower_id(self, mixed_schema, mixed_standardizer):
        x = np.array([40.0, 120.0, 1.0])
        rs = RuleSet()
        rs.add((Predicate("age", OP_LE, threshold=200.0),), 1, x.copy(), 1.0)
        rs.add((Predicate("glucose", OP_LE, threshold=200.0),), 0, x.copy(), 1.0)
        rule = nearest_covering_rule(rs, x, mixed_schema, mixed_standardizer)
        assert rule.rule_id == 0

    def test_inactive_rules_excluded(self, mixed_schema, mixed_standardizer):
        x = np.array([40.0, 120.0, 1.0])
        rs = RuleSet()
        r = rs.add((Predicate("age", OP_LE, threshold=200.0),), 1, x.copy(), 1.0)
        r.active = False
        np.testing.assert_array_equal(
            rule_predict(rs, x, mixed_schema, mixed_standardizer), [0.0, 0.0]
        )

    def test_output_sums_to_zero_or_one_randomized(self, mixed_schema, mixed_standardizer):
        rng = np.random.default_rng(99)
        for _ in range(200):
            rs = RuleSet()
            for _ in range(rng.integers(0, 6)):
                preds, cls, anchor = random_rule_fields(mixed_schema, rng)
                rs.add(preds, cls, anchor, 1.0)
            x = random_instance(mixed_schema, rng)
            s = rule_predict(rs, x, mixed_schema, mixed_standardizer).sum()
            assert s in (0.0, 1.0)

    def test_batch_matches_single(self, mixed_schema, mixed_dataset, mixed_standardizer):
        rng = np.random.default_rng(5)
        rs = RuleSet()
        for _ in range(6):
            preds, cls, anchor = random_rule_fields(mixed_schema, rng)
            rs.add(preds, cls, anchor, 1.0)
        X = np.stack([random_instance(mixed_schema, rng) for _ in range(40)])
        batch = rule_predict_batch(rs, X, mixed_schema, mixed_standardizer)
        for i in range(40):
            np.testing.assert_array_equal(
                batch[i], rule_predict(rs, X[i], mixed_schema, mixed_standardizer)
            )


class TestCoverageUsage:
    def test_three_of_four(self, mixed_schema, mixed_standardizer):
        from rulemix.data import Dataset

        X = np.array([[10.0, 0, 0], [20.0, 0, 1], [30.0, 0, 2], [90.0, 0, 0]])
        ds = Dataset(mixed_schema, X, np.array([0, 1, 0, 1]))
        rs = RuleSet()
        rs.add((Predicate("age", OP_LE, threshold=30.0),), 0, X[0], 1.0)
        assert coverage(rs, ds) == 0.75

    def test_empty_ruleset_zero(self, mixed_dataset):
        assert coverage(RuleSet(), mixed_dataset) == 0.0

    def test_coverage_monotone_under_added_rule(self, mixed_schema, mixed_dataset):
        rng = np.random.default_rng(17)
        rs = RuleSet()
        prev = coverage(rs, mixed_dataset)
        for _ in range(8):
            preds, cls, anchor = random_rule_fields(mixed_schema, rng)
            rs.add(preds, cls, anchor, 1.0)
            cur = coverage(rs, mixed_dataset)
            assert cur >= prev
            prev = cur

    def test_usage_constant_gate(self, mixed_dataset, mixed_standardizer):
        gate = DiffClassifier(mixed_dataset.schema.encoded_dim(), 2, seed=0)
        gate.set_flat(np.zeros(gate.n_params))
        # tilt the bias to each side
        gate.biases[0][:] = [5.0, -5.0]
        assert usage(gate, mixed_dataset, mixed_standardizer) == 0.0
        gate.biases[0][:] = [-5.0, 5.0]
        assert usage(gate, mixed_dataset, mixed_standardizer) == 1.0


class TestDedup:
    def test_same_predicates_different_order(self, mixed_schema):
        p1 = Predicate("age", OP_LE, threshold=30.0)
        p2 = Predicate("workclass", OP_EQ, category="Private")
        rs = RuleSet()
        rs.add((p1, p2), 0, np.array([20.0, 0, 0]), 1.0)
        rs.add((p2, p1), 0, np.array([25.0, 0, 0]), 1.0)
        out = dedup(rs)
        active = out.active_rules()
        assert len(active) == 1 and active[0].rule_id == 0

    def test_same_predicates_different_class_both_kept(self, mixed_schema):
        p = Predicate("age", OP_LE, threshold=30.0)
        rs = RuleSet()
        rs.add((p,), 0, np.array([20.0, 0, 0]), 1.0)
        rs.add((p,), 1, np.array([25.0, 0, 0]), 1.0)
        assert len(dedup(rs).active_rules()) == 2

    def test_empty_set(self):
        assert len(dedup(RuleSet()).rules) == 0

    def test_idempotent(self, mixed_schema):
        rng = np.random.default_rng(31)
        rs = RuleSet()
        for _ in range(10):
            preds, cls, anchor = random_rule_fields(mixed_schema, rng)
            rs.add(preds, cls, anchor, 1.0)
        # add exact duplicates
        for r in list(rs.rules)[:3]:
            rs.add(r.predicates, r.class_index, r.anchor, 1.0)
        once = dedup(rs)
        twice = dedup(once)
        assert [(r.rule_id, r.active) for r in once.rules] == [
            (r.rule_id, r.active) for r in twice.rules
        ]


class TestGrammar:
    def test_simple_text(self, mixed_schema):
        r = make_rule(0, [Predicate("glucose", OP_GT, threshold=155.0)], 1, [0, 160, 0])
        assert canonical_text(r, mixed_schema) == "IF glucose > 155 THEN high"

    def test_range_text(self, mixed_schema):
        r = make_rule(0, [Predicate("glucose", OP_RANGE, low=2.0, high=5.5)], 0, [0, 3, 0])
        assert canonical_text(r, mixed_schema) == "IF glucose in (2, 5.5] THEN low"

    def test_parse_simple(self, mixed_schema):
        preds, cls = parse_rule("IF glucose > 155 THEN high", mixed_schema)
        assert len(preds) == 1
        assert preds[0].op == OP_GT and preds[0].threshold == 155.0
        assert cls == 1

    def test_round_trip_three_predicates(self, mixed_schema):
        r = make_rule(
            7,
            [
                Predicate("workclass", OP_EQ, category="Self"),
                Predicate("age", OP_RANGE, low=30.0, high=40.0),
                Predicate("glucose", OP_LE, threshold=120.25),
            ],
            1,
            [35, 100, 2],
        )
        text = canonical_text(r, mixed_schema)
        preds, cls = parse_rule(text, mixed_schema)
        again = make_rule(7, preds, cls, r.anchor)
        assert canonical_text(again, mixed_schema) == text
        assert again.canonical_key() == r.canonical_key()
        assert cls == r.class_index

    def test_round_trip_property(self, mixed_schema):
        rng = np.random.default_rng(23)
        for _ in range(300):
            preds, cls, anchor = random_rule_fields(mixed_schema, rng)
            rule = make_rule(0, preds, cls, anchor)
            text = canonical_text(rule, mixed_schema)
            p2, c2 = parse_rule(text, mixed_schema)
            back = make_rule(0, p2, c2, anchor)
            assert back.canonical_key() == rule.canonical_key()
            assert c2 == cls
            assert canonical_text(back, mixed_schema) == text

    def test_unknown_feature(self, mixed_schema):
        with pytest.raises(UnknownFeatureError):
            parse_rule("IF unicorn > 1 THEN high", mixed_schema)

    def test_unknown_category(self, mixed_schema):
        with pytest.raises(UnknownCategoryError):
            parse_rule("IF workclass == purple THEN high", mixed_schema)

    def test_unknown_class_label(self, mixed_schema):
        with pytest.raises(UnknownCategoryError):
            parse_rule("IF age <= 30 THEN maybe", mixed_schema)

    def test_unknown_operator(self, mixed_schema):
        with pytest.raises(UnknownOperatorError):
            parse_rule("IF age >= 30 THEN high", mixed_schema)

    def test_malformed_number(self, mixed_schema):
        with pytest.raises(MalformedNumberError):
            parse_rule("IF age <= abc THEN high", mixed_schema)

    def test_numeric_operator_on_categorical(self, mixed_schema):
        with pytest.raises(UnknownOperatorError):
            parse_rule("IF workclass <= 3 THEN high", mixed_schema)

    def test_not_a_rule(self, mixed_schema):
        with pytest.raises(RuleParseError):
            parse_rule("hello world", mixed_schema)


class TestPersistence:
    def test_ruleset_round_trip(self, mixed_schema):
        rng = np.random.default_rng(41)
        rs = RuleSet()
        for i in range(6):
            preds, cls, anchor = random_rule_fields(mixed_schema, rng)
            r = rs.add(preds, cls, anchor, float(rng.uniform(0.5, 1.0)), iteration=i % 3)
            if i == 2:
                r.active = False
                r.context = "pruned: too specific"
            if i == 4:
                r.llm_adapted = True
                r.context = "threshold aligned with guidance"
        obj = ruleset_to_obj(rs, mixed_schema)
        back = ruleset_from_obj(obj, mixed_schema)
        assert back.next_id == rs.next_id
        assert len(back.rules) == len(rs.rules)
        for a, b in zip(rs.rules, back.rules):
            assert a.rule_id == b.rule_id
            assert a.canonical_key() == b.canonical_key()
            assert a.class_index == b.class_index
            assert a.active == b.active
            assert a.llm_adapted == b.llm_adapted
            assert a.context == b.context
            np.testing.assert_allclose(a.anchor, b.anchor)
