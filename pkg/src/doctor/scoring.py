"""Score functions over softmax / logit vectors.

Every function accepts either a single vector of shape ``(C,)`` or a batch of
shape ``(n, C)`` and returns a float or an ``(n,)`` array accordingly.

Rejection convention used across the package: a prediction is rejected iff
its *rejection score* is strictly greater than the threshold.  DOCTOR and
Mahalanobis scores already have that orientation; SR and ODIN confidences
are negated by :func:`rejection_score`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

SUM_TOL = 1e-9
METHODS = ("d_alpha", "d_beta", "sr", "odin", "mhlnb")


class InvalidDistributionError(ValueError):
    """Raised when an input is not a probability vector over >= 2 classes."""


def _batch(a, name="probs"):
    arr = np.asarray(a, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2:
        raise InvalidDistributionError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise InvalidDistributionError(f"{name} needs at least 2 classes, got {arr.shape[1]}")
    return arr, single


def _out(values, single):
    return float(values[0]) if single else values


def validate_probs(p, atol: float = SUM_TOL):
    """Return ``p`` as an ``(n, C)`` array plus a flag telling if it was 1-D."""
    arr, single = _batch(p)
    if not np.all(np.isfinite(arr)):
        raise InvalidDistributionError("probabilities must be finite")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidDistributionError("probabilities must lie in [0, 1]")
    sums = arr.sum(axis=1)
    bad = np.abs(sums - 1.0) > atol
    if np.any(bad):
        row = int(np.argmax(bad))
        raise InvalidDistributionError(f"row {row} sums to {sums[row]!r}, not 1")
    return arr, single


def validate_logits(z):
    arr, single = _batch(z, name="logits")
    if not np.all(np.isfinite(arr)):
        raise InvalidDistributionError("logits must be finite")
    return arr, single


def softmax(z, temperature: float = 1.0):
    """Numerically stable softmax of ``z / temperature``."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    arr, single = validate_logits(z)
    s = arr / temperature
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if single else out


def g_hat(p):
    """Sum of squared probabilities; ``1 - g_hat`` is the soft error statistic."""
    arr, single = validate_probs(p)
    return _out(np.einsum("ij,ij->i", arr, arr), single)


def pe_hat(p):
    """Model-side error probability ``1 - max_y p_y``."""
    arr, single = validate_probs(p)
    return _out(1.0 - arr.max(axis=1), single)


def doctor_alpha_score(p):
    """D_alpha statistic ``(1 - g) / g``; reject iff it exceeds gamma."""
    arr, single = validate_probs(p)
    g = np.einsum("ij,ij->i", arr, arr)
    return _out((1.0 - g) / g, single)


def doctor_beta_score(p):
    """D_beta statistic ``Pe_hat / (1 - Pe_hat)``; reject iff it exceeds gamma.

    ``1 - Pe_hat`` is the top probability, which is at least ``1/C``, so the
    ratio is always finite.
    """
    arr, single = validate_probs(p)
    top = arr.max(axis=1)
    return _out((1.0 - top) / top, single)


def sr_score(p):
    """Softmax response: the maximum probability.  Reject iff <= delta."""
    arr, single = validate_probs(p)
    return _out(arr.max(axis=1), single)


def odin_score(z, temperature: float = 1.0):
    """Max of the temperature-scaled softmax of logits ``z``.  Reject iff <= delta."""
    probs = np.atleast_2d(softmax(z, temperature))
    single = np.asarray(z).ndim == 1
    return _out(probs.max(axis=1), single)


@dataclass(frozen=True)
class MahalanobisModel:
    """Class means and a pooled covariance fitted on score vectors."""

    class_means: np.ndarray  # (C, k)
    shared_covariance: np.ndarray  # (k, k), ridge included
    inverse_covariance: np.ndarray  # (k, k)
    ridge: float

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    @cached_property
    def whitening(self) -> np.ndarray:
        """``W`` with ``W.T @ W = inverse_covariance``, from the eigenbasis of the covariance.

        Distances are evaluated as ``|W (v - mu)|^2``; expanding the quadratic
        form directly cancels badly when the covariance is near-singular.
        """
        lam, U = np.linalg.eigh(self.shared_covariance)
        return U.T / np.sqrt(lam)[:, None]

    def distances(self, v) -> np.ndarray:
        """Squared Mahalanobis distance of each row of ``v`` to each class mean."""
        arr = np.atleast_2d(np.asarray(v, dtype=np.float64))
        if arr.shape[1] != self.dim:
            raise InvalidDistributionError(
                f"vector dimension {arr.shape[1]} does not match fitted dimension {self.dim}"
            )
        white = (arr[:, None, :] - self.class_means[None, :, :]) @ self.whitening.T
        return np.einsum("nck,nck->nc", white, white)


class FitError(ValueError):
    pass


def mahalanobis_fit(vectors, labels, n_classes: int | None = None, ridge_scale: float = 1e-6) -> MahalanobisModel:
    """Fit per-class means and the pooled (1/n) covariance.

    A ridge ``ridge_scale * trace(S) / k`` is added to the covariance before
    inversion; with zero scatter the ridge falls back to ``ridge_scale``.
    Pass ``ridge_scale=0`` to disable it.
    """
    V = np.asarray(vectors, dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    y = np.asarray(labels)
    if V.shape[0] != y.shape[0]:
        raise FitError("vectors and labels differ in length")
    if V.shape[0] == 0:
        raise FitError("cannot fit on an empty set")
    n, k = V.shape
    C = int(y.max()) + 1 if n_classes is None else n_classes
    means = np.empty((C, k))
    centered = np.empty_like(V)
    for c in range(C):
        mask = y == c
        if not mask.any():
            raise FitError(f"class {c} has no samples")
        means[c] = V[mask].mean(axis=0)
        centered[mask] = V[mask] - means[c]
    cov = centered.T @ centered / n
    cov = (cov + cov.T) / 2
    lam = 0.0
    if ridge_scale > 0:
        tr = np.trace(cov)
        lam = ridge_scale * tr / k if tr > 0 else ridge_scale
    cov = cov + lam * np.eye(k)
    if np.linalg.matrix_rank(cov) < k:
        raise FitError("covariance is singular even after the ridge")
    inv = np.linalg.inv(cov)
    if not np.allclose(inv @ cov, np.eye(k), atol=1e-6):
        raise FitError("covariance is too ill-conditioned to invert")
    return MahalanobisModel(means, cov, inv, lam)


def mahalanobis_score(model: MahalanobisModel, v):
    """``M(v) = max_c -(v - mu_c)^T S^{-1} (v - mu_c)``; reject iff M > zeta.

    For a 1-D model a flat array is read as a batch of scalars.
    """
    arr = np.asarray(v, dtype=np.float64)
    single = arr.ndim == 0 or (arr.ndim == 1 and model.dim > 1)
    if model.dim == 1 and arr.ndim <= 1:
        arr = arr.reshape(-1, 1)
    d = model.distances(arr)
    return _out(-d.min(axis=1), single)


def rejection_score(method: str, probs=None, *, logits=None, temperature: float = 1.0,
                    mahalanobis: MahalanobisModel | None = None, vectors=None):
    """Canonical rejection score: reject iff the returned value > threshold.

    ``probs`` are used for the DOCTOR and SR methods.  ODIN prefers ``logits``
    (scaled by ``temperature``) and falls back to ``probs`` at T=1.
    Mahalanobis scores ``vectors`` (defaults to ``probs``).
    """
    if method == "d_alpha":
        return doctor_alpha_score(probs)
    if method == "d_beta":
        return doctor_beta_score(probs)
    if method == "sr":
        return -np.asarray(sr_score(probs))
    if method == "odin":
        if logits is None:
            if temperature != 1.0:
                raise ValueError("odin with T != 1 needs logits")
            return -np.asarray(sr_score(probs))
        return -np.asarray(odin_score(logits, temperature))
    if method == "mhlnb":
        if mahalanobis is None:
            raise ValueError("mhlnb needs a fitted MahalanobisModel")
        return mahalanobis_score(mahalanobis, probs if vectors is None else vectors)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
