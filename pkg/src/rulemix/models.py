"""Softmax classifiers (logistic regression and tanh MLP) with explicit gradients.

The same class serves three roles: the black-box expert, its frozen
unconstrained baseline, and the two-output gate. Gradients are computed by
hand (no autodiff): every loss is expressed as a gradient w.r.t. the output
probabilities and pushed through the softmax Jacobian and the hidden layers
by :meth:`DiffClassifier.backprop_probs`. Keeping one backward path for all
losses makes plain cross-entropy training and gated mixture training
bitwise-identical whenever the rule expert never fires.
"""

from __future__ import annotations

import json

import numpy as np

PROB_FLOOR = 1e-12


class DivergenceError(ArithmeticError):
    """Non-finite loss or gradient; usually cured by a smaller learning rate."""


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss(probs: np.ndarray, y: int) -> float:
    """Cross entropy -log p_y with the probability clamped below at 1e-12."""
    return float(-np.log(max(float(probs[y]), PROB_FLOOR)))


def ce_grad_probs(probs: np.ndarray, y: int) -> np.ndarray:
    """Gradient of ce_loss w.r.t. the probability vector (zero except slot y)."""
    g = np.zeros_like(probs)
    g[y] = -1.0 / max(float(probs[y]), PROB_FLOOR)
    return g


def predictive_entropy(probs: np.ndarray) -> float | np.ndarray:
    """Shannon entropy in nats, with the 0 * log 0 = 0 convention.

    Accepts a single probability vector (returns a scalar) or a matrix of
    row vectors (returns one entropy per row).
    """
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    h = -terms.sum(axis=-1)
    return float(h) if p.ndim == 1 else h


class DiffClassifier:
    """Affine-softmax classifier, optionally with tanh hidden layers.

    ``hidden=()`` gives logistic regression; ``hidden=(50, 50)`` the MLP
    configuration used throughout. Parameters are initialized uniformly in
    (-r, r) with r = 1/sqrt(fan_in), deterministically from the seed.
    """

    def __init__(self, input_dim: int, output_dim: int, hidden: tuple[int, ...] = (), seed: int = 0):
        if input_dim < 1 or output_dim < 2:
            raise ValueError("need input_dim >= 1 and output_dim >= 2")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.hidden = tuple(int(h) for h in hidden)
        rng = np.random.default_rng([seed, 0xD1FF])
        dims = [self.input_dim, *self.hidden, self.output_dim]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            r = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-r, r, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-r, r, size=fan_out))

    # -- parameter plumbing ------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError("flat parameter vector has the wrong length")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size

    def clone(self) -> "DiffClassifier":
        other = DiffClassifier.__new__(DiffClassifier)
        other.input_dim = self.input_dim
        other.output_dim = self.output_dim
        other.hidden = self.hidden
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    # -- forward / backward ------------------------------------------------

    def _forward_cached(self, X: np.ndarray):
        activations = [X]
        a = X
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ w + b)
            activations.append(a)
        probs = softmax(a @ self.weights[-1] + self.biases[-1])
        return probs, activations

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Probability vector(s) for one instance or a batch of rows."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {X.shape[1]}")
        probs, _ = self._forward_cached(X)
        return probs[0] if single else probs

    def backprop_probs(self, X: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
        """Flat parameter gradient of a scalar loss given its gradient w.r.t. the outputs.

        ``dprobs[i]`` is dLoss/dprobs for row i; rows are summed, so any 1/n
        weighting belongs in dprobs itself.
        """
        X = np.asarray(X, dtype=np.float64)
        probs, activations = self._forward_cached(X)
        # softmax Jacobian: dz = p * (dp - sum(p * dp))
        inner = (probs * dprobs).sum(axis=1, keepdims=True)
        delta = probs * (dprobs - inner)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = activations[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (1.0 - activations[layer] ** 2)
        parts = []
        for gw, gb in zip(grads_w, grads_b):
            parts.append(gw.ravel())
            parts.append(gb.ravel())
        return np.concatenate(parts)

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "arch": {
                "kind": "mlp" if self.hidden else "lr",
                "input_dim": self.input_dim,
                "hidden": list(self.hidden),
                "output_dim": self.output_dim,
            },
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DiffClassifier":
        arch = obj["arch"]
        model = cls(arch["input_dim"], arch["output_dim"], tuple(arch["hidden"]), seed=0)
        model.weights = [np.asarray(w, dtype=np.float64) for w in obj["weights"]]
        model.biases = [np.asarray(b, dtype=np.float64) for b in obj["biases"]]
        return model

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "DiffClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def grad_params(model: DiffClassifier, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mean cross-entropy gradient over a batch, as a flat vector.

    Raises DivergenceError if any entry comes out non-finite.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("batch must be a non-empty matrix")
    probs = model.forward(X)
    n = X.shape[0]
    dprobs = np.zeros_like(probs)
    rows = np.arange(n)
    dprobs[rows, y] = -1.0 / np.maximum(probs[rows, y], PROB_FLOOR) / n
    grad = model.backprop_probs(X, dprobs)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient; try a smaller learning rate")
    return grad


def sgd_step(model: DiffClassifier, grad: np.ndarray, eta: float) -> None:
    """In-place descent step: parameters <- parameters - eta * grad."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (model.n_params,):
        raise ValueError("gradient length does not match parameter count")
    model.set_flat(model.get_flat() - eta * grad)


def batch_ce_loss(model: DiffClassifier, X: np.ndarray, y: np.ndarray) -> float:
    """Mean cross entropy of the model over a batch."""
    probs = model.forward(X)
    picked = np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR)
    return float(-np.log(picked).mean())
