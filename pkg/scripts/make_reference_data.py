#!/usr/bin/env python3
"""Regenerate the bundled reference dataset (data/diabetes.csv + schema).

This is a SYNTHETIC STAND-IN for the public OpenML "diabetes" table
(dataset id 37: 768 rows, 8 numeric features, binary outcome), built for
offline CI where the real table cannot be downloaded. It reproduces the
published schema, per-feature means/standard deviations/ranges/resolutions,
the 34.9% positive rate, and a plausible correlation structure; labels come
from a seeded logistic model with a glucose-BMI interaction and a mixed-in
noise fraction, calibrated so that logistic-regression and small-MLP
baselines land near their published behavior on the real table
(log loss ~0.5, accuracy ~0.75).

To run against the real table instead, export it from OpenML with the same
column order and class labels and drop it in at data/diabetes.csv -- every
consumer reads it through the same schema file.

The output is deterministic; regenerating produces byte-identical files.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from rulemix.data import Dataset, FeatureSchema, FeatureSpec, save_csv, save_schema

SEED = 20240613
N_ROWS = 768
POSITIVE_RATE = 0.349

FEATURES = ["preg", "plas", "pres", "skin", "insu", "mass", "pedi", "age"]
# published summary statistics of the real table
MEANS = np.array([3.845, 120.89, 69.11, 20.54, 79.80, 31.99, 0.4719, 33.24])
STDS = np.array([3.370, 31.97, 19.36, 15.95, 115.24, 7.88, 0.3313, 11.76])
LOWS = np.array([0.0, 44.0, 24.0, 0.0, 0.0, 18.2, 0.078, 21.0])
HIGHS = np.array([17.0, 199.0, 122.0, 99.0, 846.0, 67.1, 2.42, 81.0])
DECIMALS = [0, 0, 0, 0, 0, 1, 3, 0]

# plausible pairwise correlations (strongest published ones)
CORRELATIONS = {
    ("preg", "age"): 0.54,
    ("preg", "plas"): 0.13,
    ("preg", "pres"): 0.14,
    ("plas", "insu"): 0.33,
    ("plas", "age"): 0.26,
    ("plas", "mass"): 0.22,
    ("plas", "pres"): 0.15,
    ("pres", "age"): 0.24,
    ("pres", "mass"): 0.28,
    ("skin", "mass"): 0.39,
    ("skin", "insu"): 0.44,
    ("skin", "plas"): 0.06,
    ("insu", "age"): -0.04,
    ("mass", "age"): 0.04,
}

# label model on standardized observed features (clinical directionality)
WEIGHTS = np.array([0.30, 1.05, -0.10, 0.05, -0.05, 0.60, 0.25, 0.25])
INTERACTION = 0.55  # glucose x bmi synergy
SHARPNESS = 2.4
NOISE_RATE = 0.26  # fraction of pure label noise mixed in


def correlation_matrix() -> np.ndarray:
    C = np.eye(len(FEATURES))
    idx = {name: j for j, name in enumerate(FEATURES)}
    for (a, b), v in CORRELATIONS.items():
        C[idx[a], idx[b]] = C[idx[b], idx[a]] = v
    # project to the nearest well-conditioned correlation matrix
    w, V = np.linalg.eigh(C)
    C = V @ np.diag(np.clip(w, 1e-3, None)) @ V.T
    d = np.sqrt(np.diag(C))
    return C / np.outer(d, d)


def generate() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(SEED)
    L = np.linalg.cholesky(correlation_matrix())
    Z = rng.standard_normal((N_ROWS, len(FEATURES))) @ L.T
    X = np.empty_like(Z)
    for j in range(len(FEATURES)):
        col = np.clip(MEANS[j] + STDS[j] * Z[:, j], LOWS[j], HIGHS[j])
        X[:, j] = np.round(col, DECIMALS[j])

    Xs = (X - X.mean(axis=0)) / X.std(axis=0)
    score = Xs @ WEIGHTS + INTERACTION * Xs[:, 1] * Xs[:, 5]

    # bisect the intercept so the expected positive rate matches the table
    lo, hi = -8.0, 8.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        q = NOISE_RATE / 2 + (1 - NOISE_RATE) / (1 + np.exp(-SHARPNESS * (score + mid)))
        if q.mean() < POSITIVE_RATE:
            lo = mid
        else:
            hi = mid
    b = 0.5 * (lo + hi)
    q = NOISE_RATE / 2 + (1 - NOISE_RATE) / (1 + np.exp(-SHARPNESS * (score + b)))
    y = (rng.random(N_ROWS) < q).astype(np.int64)
    return X, y


def main() -> None:
    out_dir = os.path.join(os.path.dirname(__file__), "..", "data")
    os.makedirs(out_dir, exist_ok=True)
    schema = FeatureSchema(
        features=tuple(FeatureSpec(name, "numeric") for name in FEATURES),
        target_name="class",
        classes=("tested_negative", "tested_positive"),
    )
    X, y = generate()
    ds = Dataset(schema, X, y)
    save_schema(schema, os.path.join(out_dir, "diabetes.schema.json"))
    save_csv(ds, os.path.join(out_dir, "diabetes.csv"))
    print(f"wrote {len(ds)} rows, positive rate {y.mean():.3f}")


if __name__ == "__main__":
    main()
