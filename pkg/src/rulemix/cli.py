"""Command-line surface: train, eval, explain, report.

Exit codes: 0 success, 1 generic error (bad paths, schema mismatch,
malformed instance), 2 config parse error, 3 training divergence,
4 refinement unavailable with refiner=remote and no fallback configured.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bundle import METRICS_FILE, ModelBundle, load_bundle, save_bundle
from .config import ConfigError, load_run_config
from .data import (
    Dataset,
    UnknownCategoryError,
    instance_from_mapping,
    load_csv,
    load_schema,
    split,
)
from .discovery import run
from .mixture import MixtureModel, mixture_predict, mixture_predict_batch
from .models import DivergenceError
from .refiner import RefinementUnavailableError, RemoteChatClient, StubChatClient
from .rules import coverage, nearest_covering_rule, rule_predict_batch, usage

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_REFINER = 4

FALLBACK_DISCLAIMER = (
    "note: no rule-backed explanation applies here; this prediction comes from "
    "the black-box expert and may not follow any stated rule."
)


def _build_refiner(cfg):
    if cfg.refiner_kind == "none":
        return None, False
    if cfg.refiner_kind == "stub":
        return StubChatClient(load_schema(cfg.schema_path)), False
    return RemoteChatClient(cfg.llm), not cfg.fallback_unrefined


def cmd_train(args) -> int:
    try:
        cfg = load_run_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        schema = load_schema(cfg.schema_path)
        full = load_csv(cfg.train_csv, schema)
        train, test = split(full, cfg.test_fraction, cfg.seed)
        client, strict = _build_refiner(cfg)
        state = run(train, test, cfg.discovery_config(), client, strict_refiner=strict)
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except RefinementUnavailableError as exc:
        print(f"refinement unavailable: {exc}", file=sys.stderr)
        return EXIT_REFINER
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    save_bundle(cfg.output_dir, state)
    last = state.metrics[-1]
    print(
        f"iteration={last.iteration} train_loss={last.train_loss:.4f} "
        f"test_loss={last.test_loss:.4f} test_acc={last.test_acc:.4f} "
        f"coverage={last.coverage:.4f} usage={last.usage:.4f} n_rules={last.n_rules}"
    )
    print(f"bundle written to {cfg.output_dir}")
    return EXIT_OK


def _evaluate(m: MixtureModel, data: Dataset) -> dict:
    R = rule_predict_batch(m.rules, data.X, m.schema, m.standardizer)
    probs = mixture_predict_batch(m, data.X, R)
    picked = np.maximum(probs[np.arange(len(data)), data.y], 1e-12)
    fired = R.sum(axis=1) == 1.0
    rule_acc = float((R[fired].argmax(axis=1) == data.y[fired]).mean()) if fired.any() else 0.0
    return {
        "test_loss": float(-np.log(picked).mean()),
        "test_acc": float((probs.argmax(axis=1) == data.y).mean()),
        "coverage": coverage(m.rules, data),
        "usage": usage(m.g, data, m.standardizer),
        "rule_acc": rule_acc,
        "n_rules": len(m.rules.active_rules()),
    }


def cmd_eval(args) -> int:
    try:
        bundle = load_bundle(args.bundle)
        data = load_csv(args.data, bundle.mixture.schema)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    bundle.mixture.hard_gate = bool(args.hard_gate)
    report = _evaluate(bundle.mixture, data)
    for key, value in report.items():
        if isinstance(value, float):
            print(f"{key}={value:.6f}")
        else:
            print(f"{key}={value}")
    return EXIT_OK


def cmd_explain(args) -> int:
    try:
        bundle = load_bundle(args.bundle)
        raw = args.instance
        if raw.strip().startswith("{"):
            payload = json.loads(raw)
        else:
            with open(raw, encoding="utf-8") as fh:
                payload = json.load(fh)
        x = instance_from_mapping(bundle.mixture.schema, payload)
    except (OSError, ValueError, KeyError, UnknownCategoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    m = bundle.mixture
    schema = m.schema
    rule = nearest_covering_rule(m.rules, x, schema, m.standardizer)
    from .data import encode  # local import keeps module surface tidy
    from .rules import canonical_text

    g_probs = m.g.forward(encode(x, m.standardizer, schema))
    if rule is not None and g_probs[1] > 0.5:
        print(f"prediction: {schema.classes[rule.class_index]}")
        print(f"rule: {canonical_text(rule, schema)}")
        print(f"context: {rule.context if rule.context else '(none stored)'}")
    else:
        probs = mixture_predict(m, x)
        print(f"prediction: {schema.classes[int(probs.argmax())]}")
        print(FALLBACK_DISCLAIMER)
    return EXIT_OK


def cmd_report(args) -> int:
    path = os.path.join(args.bundle, METRICS_FILE)
    if not os.path.exists(path):
        print(f"error: no metrics file at {path}", file=sys.stderr)
        return EXIT_ERROR
    with open(path, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rulemix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a bundle on a CSV")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--hard-gate", action="store_true", help="one-hot the gate at inference")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="explain one instance (JSON file or literal)")
    p.add_argument("--bundle", required=True)
    p.add_argument("--instance", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("report", help="print the per-iteration metrics CSV")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
