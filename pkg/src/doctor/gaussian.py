"""Two isotropic Gaussians with known posteriors.

Labels are +1 / -1 here; class index 0 is label -1 and index 1 is label +1
wherever a probability vector is produced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, rel_entr
from scipy.stats import norm

QUAD_EXTENT_SIGMAS = 6.0
QUAD_NORM_TOL = 1e-4


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianBinaryModel:
    """``X | Y=y ~ N(y * mu, sigma^2 I)`` with equal class priors."""

    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        if mu.ndim != 1 or not np.all(np.isfinite(mu)):
            raise ValueError("mu must be a finite vector")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def _project(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x.shape[-1]}")
        return x @ self.mu

    def log_density(self, x, label):
        """``log N(x; label * mu, sigma^2 I)``."""
        x = np.asarray(x, dtype=np.float64)
        diff = x - np.asarray(label)[..., None] * self.mu
        sq = np.sum(diff * diff, axis=-1)
        return -0.5 * sq / self.sigma**2 - 0.5 * self.dim * np.log(2 * np.pi * self.sigma**2)

    def log_mixture_density(self, x):
        return np.logaddexp(self.log_density(x, -1), self.log_density(x, 1)) + np.log(0.5)


@dataclass(frozen=True)
class Samples:
    X: np.ndarray  # (n, d)
    y: np.ndarray  # (n,) in {-1, +1}

    def __len__(self):
        return self.y.shape[0]

    def subset(self, idx) -> "Samples":
        return Samples(self.X[idx], self.y[idx])


@dataclass(frozen=True)
class SplitDataset:
    train: Samples
    test: Samples
    train_index: np.ndarray
    test_index: np.ndarray
    seed: int


def sample_pool(model: GaussianBinaryModel, n_per_class: int, seed: int) -> Samples:
    """Draw ``n_per_class`` points from each class; class -1 first."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((2 * n_per_class, model.dim))
    y = np.repeat(np.array([-1, 1]), n_per_class)
    X = y[:, None] * model.mu + model.sigma * noise
    return Samples(X, y)


def split(pool: Samples, n_train: int, seed: int) -> SplitDataset:
    """Uniform random train/test partition of ``pool``."""
    n = len(pool)
    if not 0 < n_train < n:
        raise ValueError(f"n_train must be in (0, {n}), got {n_train}")
    perm = np.random.default_rng(seed).permutation(n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return SplitDataset(pool.subset(tr), pool.subset(te), tr, te, seed)


def bayes_classify(model: GaussianBinaryModel, x):
    """``sign(x . mu)`` with ties sent to +1."""
    return np.where(model._project(x) >= 0, 1, -1)


def bayes_accuracy(model: GaussianBinaryModel) -> float:
    """Closed-form accuracy ``Phi(|mu| / sigma)`` of the Bayes classifier."""
    return float(norm.cdf(np.linalg.norm(model.mu) / model.sigma))


def _log_odds(model, x):
    # log P(+1|x) - log P(-1|x)
    return 2.0 * model._project(x) / model.sigma**2


def true_posterior(model: GaussianBinaryModel, x):
    """True class posterior ``[P(-1|x), P(+1|x)]``."""
    p_pos = expit(_log_odds(model, x))
    return np.stack([1.0 - p_pos, p_pos], axis=-1)


def true_pe(model: GaussianBinaryModel, predicted, x):
    """True probability that ``predicted`` is wrong at ``x``."""
    predicted = np.asarray(predicted)
    if not np.all(np.isin(predicted, (-1, 1))):
        raise ValueError("predicted labels must be -1 or +1")
    # P(Y != f | x) = sigmoid(-f * log-odds)
    return expit(-predicted * _log_odds(model, x))


def optimal_score(model: GaussianBinaryModel, predicted, x):
    """Oracle statistic ``N(x; -f mu) / N(x; f mu)``; reject iff it exceeds gamma.

    Equals the true odds of error ``Pe / (1 - Pe)``.
    """
    predicted = np.asarray(predicted)
    with np.errstate(over="ignore"):
        return np.exp(-predicted * _log_odds(model, x))


def optimal_log_score(model: GaussianBinaryModel, predicted, x):
    return -np.asarray(predicted) * _log_odds(model, x)


def kl_delta(model: GaussianBinaryModel, q_hat, x):
    """``2 sqrt(2 KL(P_true(.|x) || P_model(.|x)))`` in nats.

    ``q_hat`` is the model's probability of label +1.  A model probability
    of exactly 0 or 1 against a non-degenerate truth gives ``inf``.
    """
    q_hat = np.asarray(q_hat, dtype=np.float64)
    q = expit(_log_odds(model, x))
    with np.errstate(divide="ignore"):
        kl = rel_entr(q, q_hat) + rel_entr(1.0 - q, 1.0 - q_hat)
    kl = np.maximum(kl, 0.0)
    return 2.0 * np.sqrt(2.0 * kl)


def markov_epsilon(cross_entropy_risk: float, eta: float) -> float:
    """Level ``eps`` with ``P(Delta(X) >= eps) <= eta`` given the CE risk in nats."""
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    if cross_entropy_risk < 0:
        raise ValueError("cross-entropy risk must be >= 0")
    return float(2.0 * np.sqrt(2.0 * cross_entropy_risk / eta))


def quadrature_grid(model: GaussianBinaryModel, step_sigmas: float = 0.02):
    """Midpoint grid over ``[-(|mu|_inf + 6 sigma), +...]^2``.

    Returns cell centers of shape ``(m, m, 2)`` and the cell side ``h``.
    """
    if model.dim != 2:
        raise ValueError("quadrature is only implemented for d = 2")
    half = float(np.max(np.abs(model.mu))) + QUAD_EXTENT_SIGMAS * model.sigma
    m = int(np.ceil(2 * half / (step_sigmas * model.sigma)))
    h = 2 * half / m
    centers = -half + h * (np.arange(m) + 0.5)
    gx, gy = np.meshgrid(centers, centers, indexing="ij")
    return np.stack([gx, gy], axis=-1), h


def _as_predictor(classifier):
    if hasattr(classifier, "predict"):
        return classifier.predict
    if callable(classifier):
        return classifier
    raise TypeError("classifier must be callable or have a predict method")


def error_conditionals(model: GaussianBinaryModel, classifier, step_sigmas: float = 0.02):
    """Grid densities of ``X | E=1`` and ``X | E=0`` and ``P(E=1)``.

    ``classifier`` maps an ``(n, 2)`` array to labels in {-1, +1}.
    Returns ``(p1, p0, pe1, h)``.
    """
    grid, h = quadrature_grid(model, step_sigmas)
    pts = grid.reshape(-1, 2)
    px = np.exp(model.log_mixture_density(pts))
    mass = px.sum() * h * h
    if abs(mass - 1.0) > QUAD_NORM_TOL:
        raise QuadratureError(f"mixture integrates to {mass:.6f} on the grid")
    predict = _as_predictor(classifier)
    pe = true_pe(model, np.asarray(predict(pts)), pts)
    joint1 = px * pe
    joint0 = px * (1.0 - pe)
    z1, z0 = joint1.sum() * h * h, joint0.sum() * h * h
    return joint1 / z1, joint0 / z0, z1 / (z1 + z0), h


def tv_distance_numeric(model: GaussianBinaryModel, classifier, step_sigmas: float = 0.02) -> float:
    """Total variation between the error-conditional input densities."""
    p1, p0, _, h = error_conditionals(model, classifier, step_sigmas)
    tv = 0.5 * np.abs(p1 - p0).sum() * h * h
    return float(min(max(tv, 0.0), 1.0))


def error_prior(model: GaussianBinaryModel, classifier, step_sigmas: float = 0.02) -> float:
    """``P(E=1)`` for ``classifier`` under the mixture, by quadrature."""
    return float(error_conditionals(model, classifier, step_sigmas)[2])


__all__ = [
    "GaussianBinaryModel",
    "QuadratureError",
    "Samples",
    "SplitDataset",
    "bayes_accuracy",
    "bayes_classify",
    "error_prior",
    "kl_delta",
    "markov_epsilon",
    "optimal_log_score",
    "optimal_score",
    "sample_pool",
    "split",
    "true_pe",
    "true_posterior",
    "tv_distance_numeric",
]
