"""Binary logistic regression trained by full-batch gradient descent."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, log_expit

CE_CLIP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 5
    seed: int = 0  # unused by the deterministic zero-init trainer

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class LogisticClassifier:
    """``P(+1 | x) = sigmoid((w . x + b) / T)``; labels are -1 / +1."""

    weights: np.ndarray
    bias: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("parameters must be finite")

    def logit(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def predict(self, x):
        return predict(self, x)

    def posterior(self, x, temperature: float | None = None):
        return posterior(self, x, self.temperature if temperature is None else temperature)

    def with_temperature(self, temperature: float) -> "LogisticClassifier":
        return replace(self, temperature=temperature)


def posterior(c: LogisticClassifier, x, temperature: float = 1.0):
    """Softmax vector ``[P(-1|x), P(+1|x)]`` at the given temperature."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    p = expit(c.logit(x) / temperature)
    return np.stack([1.0 - p, p], axis=-1)


def predict(c: LogisticClassifier, x):
    """+1 iff ``w . x + b > 0``; the boundary goes to -1."""
    return np.where(c.logit(x) > 0, 1, -1)


def bce_loss(weights, bias, X, y):
    """Mean binary cross-entropy in nats; ``y`` in {-1, +1}."""
    z = X @ weights + bias
    # -log sigmoid(y z)
    return float(-np.mean(log_expit(y * z)))


def bce_grad(weights, bias, X, y):
    """Gradient of :func:`bce_loss` w.r.t. ``(weights, bias)``."""
    t = (np.asarray(y) > 0).astype(np.float64)
    r = expit(X @ weights + bias) - t
    return X.T @ r / X.shape[0], float(r.mean())


def train(X, y, cfg: TrainConfig = TrainConfig(), history: list | None = None) -> LogisticClassifier:
    """Zero-initialised full-batch gradient descent, one step per epoch.

    If ``history`` is given, the training loss before every step and after
    the last one is appended to it.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set must be a non-empty (n, d) array")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y differ in length")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be -1 or +1")
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(cfg.epochs):
        if history is not None:
            history.append(bce_loss(w, b, X, y))
        gw, gb = bce_grad(w, b, X, y)
        w = w - cfg.learning_rate * gw
        b = b - cfg.learning_rate * gb
    if history is not None:
        history.append(bce_loss(w, b, X, y))
    return LogisticClassifier(w, b)


def ce_risk(c: LogisticClassifier, X, y, clip: float = CE_CLIP) -> float:
    """Mean ``-log p_y(x)`` in nats, probabilities clipped to ``[clip, 1-clip]``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("dataset is empty")
    p_pos = posterior(c, X, c.temperature)[:, 1]
    p_true = np.where(y > 0, p_pos, 1.0 - p_pos)
    return float(-np.mean(np.log(np.clip(p_true, clip, 1.0 - clip))))


def accuracy(c: LogisticClassifier, X, y) -> float:
    return float(np.mean(predict(c, X) == np.asarray(y)))
