"""On-disk layout of a trained model: one directory with fixed file names.

Reloading a bundle reproduces the in-memory model exactly (JSON floats are
serialized with full round-trip precision), so saved and live predictions
match bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .data import FeatureSchema, Standardizer, load_schema, save_schema
from .discovery import METRIC_COLUMNS, IterationMetrics, RunState
from .mixture import BaselineSnapshot, MixtureModel
from .models import DiffClassifier
from .rules import RuleSet, ruleset_from_obj, ruleset_to_obj

SCHEMA_FILE = "schema.json"
F_FILE = "f.json"
G_FILE = "g.json"
BASELINE_FILE = "baseline.json"
RULESET_FILE = "ruleset.json"
STANDARDIZER_FILE = "standardizer.json"
METRICS_FILE = "metrics.csv"
TRANSCRIPT_FILE = "transcript.json"


@dataclass
class ModelBundle:
    """A reloaded training run: the deployable mixture plus run artifacts."""

    mixture: MixtureModel
    baseline: BaselineSnapshot
    metrics_text: str
    transcripts: list


def _csv_cell(v) -> str:
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def metrics_csv_text(metrics: list[IterationMetrics]) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for m in metrics:
        lines.append(",".join(_csv_cell(v) for v in m.to_row()))
    return "\n".join(lines) + "\n"


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def save_bundle(directory, state: RunState) -> None:
    os.makedirs(directory, exist_ok=True)
    m = state.mixture
    save_schema(m.schema, os.path.join(directory, SCHEMA_FILE))
    m.f.save_json(os.path.join(directory, F_FILE))
    m.g.save_json(os.path.join(directory, G_FILE))
    _write_json(os.path.join(directory, BASELINE_FILE), state.baseline.to_dict())
    _write_json(os.path.join(directory, RULESET_FILE), ruleset_to_obj(m.rules, m.schema))
    _write_json(os.path.join(directory, STANDARDIZER_FILE), m.standardizer.to_dict())
    _write_json(os.path.join(directory, TRANSCRIPT_FILE), state.transcripts)
    with open(os.path.join(directory, METRICS_FILE), "w", encoding="utf-8") as fh:
        fh.write(metrics_csv_text(state.metrics))


def load_bundle(directory) -> ModelBundle:
    schema = load_schema(os.path.join(directory, SCHEMA_FILE))
    f = DiffClassifier.load_json(os.path.join(directory, F_FILE))
    g = DiffClassifier.load_json(os.path.join(directory, G_FILE))
    with open(os.path.join(directory, BASELINE_FILE), encoding="utf-8") as fh:
        baseline = BaselineSnapshot.from_dict(json.load(fh))
    with open(os.path.join(directory, RULESET_FILE), encoding="utf-8") as fh:
        rules = ruleset_from_obj(json.load(fh), schema)
    with open(os.path.join(directory, STANDARDIZER_FILE), encoding="utf-8") as fh:
        standardizer = Standardizer.from_dict(json.load(fh))
    with open(os.path.join(directory, METRICS_FILE), encoding="utf-8") as fh:
        metrics_text = fh.read()
    with open(os.path.join(directory, TRANSCRIPT_FILE), encoding="utf-8") as fh:
        transcripts = json.load(fh)
    mixture = MixtureModel(f=f, g=g, rules=rules, schema=schema, standardizer=standardizer)
    return ModelBundle(
        mixture=mixture, baseline=baseline, metrics_text=metrics_text, transcripts=transcripts
    )
