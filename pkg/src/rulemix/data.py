"""Tabular data handling: feature schema, CSV ingestion, standardization, splits.

Instances are represented as 1-D float64 arrays aligned with the schema's
feature order; categorical slots hold the category index as a float. Models
never see these raw vectors directly -- they consume the encoded form
(standardized numerics + one-hot categoricals) produced by :func:`encode`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    """Invalid schema definition (duplicate names, too few categories, ...)."""


class SchemaMismatchError(ValueError):
    """CSV header does not match the schema's feature order + target column."""


class RowError(ValueError):
    """A CSV row could not be parsed; message includes the 1-based line number."""


class UnknownCategoryError(ValueError):
    """A categorical value is absent from the schema's category list."""

    def __init__(self, feature: str, value: str):
        super().__init__(f"unknown category {value!r} for feature {feature!r}")
        self.feature = feature
        self.value = value


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown feature kind {self.kind!r}")
        if self.kind == CATEGORICAL and len(self.categories) < 2:
            raise SchemaError(f"categorical feature {self.name!r} needs >= 2 categories")
        if self.kind == NUMERIC and self.categories:
            raise SchemaError(f"numeric feature {self.name!r} must not list categories")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature specs plus the target column name and class labels."""

    features: tuple[FeatureSpec, ...]
    target_name: str
    classes: tuple[str, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if self.target_name in names:
            raise SchemaError("target column name collides with a feature name")
        if len(self.classes) < 2:
            raise SchemaError("need at least 2 classes")
        if len(set(self.classes)) != len(self.classes):
            raise SchemaError("class labels must be unique")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_features(self) -> int:
        return len(self.features)

    def feature_index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise KeyError(name)

    def class_index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise UnknownCategoryError(self.target_name, label) from None

    def encoded_dim(self) -> int:
        """Length of the encoded vector: numerics contribute 1, categoricals |categories|."""
        return sum(1 if f.kind == NUMERIC else len(f.categories) for f in self.features)


def schema_from_dict(obj: dict) -> FeatureSchema:
    feats = []
    for spec in obj["features"]:
        feats.append(
            FeatureSpec(
                name=spec["name"],
                kind=spec["kind"],
                categories=tuple(spec.get("categories", ())),
            )
        )
    return FeatureSchema(
        features=tuple(feats),
        target_name=obj["target_name"],
        classes=tuple(obj["classes"]),
    )


def schema_to_dict(schema: FeatureSchema) -> dict:
    feats = []
    for f in schema.features:
        d = {"name": f.name, "kind": f.kind}
        if f.kind == CATEGORICAL:
            d["categories"] = list(f.categories)
        feats.append(d)
    return {
        "features": feats,
        "target_name": schema.target_name,
        "classes": list(schema.classes),
    }


def load_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))


def save_schema(schema: FeatureSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema_to_dict(schema), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class Dataset:
    """N instances with class labels, tied to the schema they conform to."""

    schema: FeatureSchema
    X: np.ndarray  # (N, d) float64; categorical slots hold category indices
    y: np.ndarray  # (N,) int64 class indices

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[1] != self.schema.n_features:
            raise ValueError("X shape does not match schema")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")
        if self.X.shape[0] < 1:
            raise ValueError("dataset must hold at least one instance")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.schema.n_classes):
            raise ValueError("labels out of range")
        for j, spec in enumerate(self.schema.features):
            if spec.kind == CATEGORICAL:
                col = self.X[:, j]
                if np.any(col != np.round(col)) or col.min() < 0 or col.max() >= len(spec.categories):
                    raise ValueError(f"invalid category index in feature {spec.name!r}")

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.schema, self.X[idx].copy(), self.y[idx].copy())


def format_value(v: float) -> str:
    if v == np.round(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(float(v))


def load_csv(path, schema: FeatureSchema) -> Dataset:
    """Parse a comma-separated file (header row, UTF-8) against the schema.

    The header must list the schema's features in order followed by the
    target column. Categorical values and class labels are mapped to indices.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatchError("empty file, header row expected") from None
        expected = [f.name for f in schema.features] + [schema.target_name]
        if header != expected:
            missing = set(expected) - set(header)
            if missing:
                raise SchemaMismatchError(f"missing columns: {sorted(missing)}")
            raise SchemaMismatchError(f"header {header} does not match schema order {expected}")

        rows, labels = [], []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(expected):
                raise RowError(f"line {lineno}: expected {len(expected)} fields, got {len(record)}")
            vals = np.empty(schema.n_features, dtype=np.float64)
            for j, spec in enumerate(schema.features):
                raw = record[j].strip()
                if raw == "":
                    raise RowError(f"line {lineno}: missing value for feature {spec.name!r}")
                if spec.kind == NUMERIC:
                    try:
                        vals[j] = float(raw)
                    except ValueError:
                        raise RowError(
                            f"line {lineno}: unparseable numeric {raw!r} for feature {spec.name!r}"
                        ) from None
                else:
                    try:
                        vals[j] = spec.categories.index(raw)
                    except ValueError:
                        raise UnknownCategoryError(spec.name, raw) from None
            label_raw = record[-1].strip()
            labels.append(schema.class_index(label_raw))
            rows.append(vals)

    if not rows:
        raise RowError("file holds a header but no data rows")
    return Dataset(schema, np.stack(rows), np.asarray(labels, dtype=np.int64))


def save_csv(data: Dataset, path) -> None:
    """Write a Dataset back to CSV; load_csv of the result reproduces it exactly."""
    schema = data.schema
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in schema.features] + [schema.target_name])
        for i in range(len(data)):
            record = []
            for j, spec in enumerate(schema.features):
                v = data.X[i, j]
                if spec.kind == CATEGORICAL:
                    record.append(spec.categories[int(v)])
                else:
                    record.append(format_value(v))
            record.append(schema.classes[int(data.y[i])])
            writer.writerow(record)


@dataclass
class Standardizer:
    """Per-feature location/scale fitted on training data.

    Categorical slots carry mean 0 / std 1 so the transform is the identity
    there; constant numeric columns get std 1 to avoid division by zero.
    """

    mean: np.ndarray
    std: np.ndarray

    def transform_value(self, j: int, v: float) -> float:
        return (v - self.mean[j]) / self.std[j]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "Standardizer":
        return cls(np.asarray(obj["mean"], dtype=np.float64), np.asarray(obj["std"], dtype=np.float64))


def fit_standardizer(train: Dataset) -> Standardizer:
    """Population mean/std of each numeric feature on the training set."""
    d = train.schema.n_features
    mean = np.zeros(d)
    std = np.ones(d)
    for j, spec in enumerate(train.schema.features):
        if spec.kind != NUMERIC:
            continue
        col = train.X[:, j]
        mean[j] = col.mean()
        s = col.std()
        std[j] = s if s > 0 else 1.0
    return Standardizer(mean, std)


def encode(x: np.ndarray, standardizer: Standardizer, schema: FeatureSchema) -> np.ndarray:
    """Map a raw instance to the model input: standardized numerics, one-hot categoricals."""
    out = np.zeros(schema.encoded_dim(), dtype=np.float64)
    pos = 0
    for j, spec in enumerate(schema.features):
        if spec.kind == NUMERIC:
            out[pos] = standardizer.transform_value(j, x[j])
            pos += 1
        else:
            k = int(x[j])
            if k < 0 or k >= len(spec.categories):
                raise UnknownCategoryError(spec.name, str(x[j]))
            out[pos + k] = 1.0
            pos += len(spec.categories)
    return out


def encode_matrix(X: np.ndarray, standardizer: Standardizer, schema: FeatureSchema) -> np.ndarray:
    """Vectorized encode over the rows of a raw instance matrix."""
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros((X.shape[0], schema.encoded_dim()), dtype=np.float64)
    pos = 0
    for j, spec in enumerate(schema.features):
        if spec.kind == NUMERIC:
            out[:, pos] = (X[:, j] - standardizer.mean[j]) / standardizer.std[j]
            pos += 1
        else:
            idx = X[:, j].astype(np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= len(spec.categories)):
                raise UnknownCategoryError(spec.name, str(idx[(idx < 0) | (idx >= len(spec.categories))][0]))
            out[np.arange(X.shape[0]), pos + idx] = 1.0
            pos += len(spec.categories)
    return out


def encode_dataset(data: Dataset, standardizer: Standardizer) -> np.ndarray:
    """Encode all instances as a (N, encoded_dim) matrix."""
    return encode_matrix(data.X, standardizer, data.schema)


def split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test partition, deterministic for a fixed seed.

    Each class contributes round(test_fraction * n_c) instances to the test
    side, clipped so both sides keep at least one instance of every class.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng([seed, 0x5B11])
    test_idx = []
    for c in range(data.schema.n_classes):
        members = np.flatnonzero(data.y == c)
        if members.size < 2:
            raise ValueError(f"class {data.schema.classes[c]!r} has fewer than 2 instances")
        n_test = int(round(test_fraction * members.size))
        n_test = min(max(n_test, 1), members.size - 1)
        perm = rng.permutation(members.size)
        test_idx.extend(members[perm[:n_test]].tolist())
    test_mask = np.zeros(len(data), dtype=bool)
    test_mask[test_idx] = True
    return data.subset(np.flatnonzero(~test_mask)), data.subset(np.flatnonzero(test_mask))


def instance_from_mapping(schema: FeatureSchema, values: dict) -> np.ndarray:
    """Build a raw instance vector from a {feature name: value} mapping.

    Categorical values are given as category strings, numerics as numbers.
    """
    x = np.empty(schema.n_features, dtype=np.float64)
    for j, spec in enumerate(schema.features):
        if spec.name not in values:
            raise KeyError(f"instance is missing feature {spec.name!r}")
        v = values[spec.name]
        if spec.kind == NUMERIC:
            x[j] = float(v)
        else:
            if v not in spec.categories:
                raise UnknownCategoryError(spec.name, str(v))
            x[j] = spec.categories.index(v)
    return x


def instance_to_mapping(schema: FeatureSchema, x: np.ndarray) -> dict:
    """Inverse of instance_from_mapping; categoricals come back as strings."""
    out = {}
    for j, spec in enumerate(schema.features):
        if spec.kind == NUMERIC:
            v = float(x[j])
            out[spec.name] = int(v) if v == round(v) and abs(v) < 1e16 else v
        else:
            out[spec.name] = spec.categories[int(x[j])]
    return out
