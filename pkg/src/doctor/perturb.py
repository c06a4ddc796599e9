"""Sign-gradient input pre-processing for the partially black-box setting.

Each method has a scalar objective that the step increases::

    x_tilde = x - eps * sign(-grad_x objective(x))

Objectives, with ``z = (w . x + b) / T`` and ``P`` the top class probability:

    alpha  log((1 - g) / g)          g = sum of squared probabilities
    beta   log(Pe_hat / (1 - Pe_hat))
    odin   log P
    mhlnb  M(v(x)), v the T=1 softmax vector

For alpha and beta this moves the input towards a larger rejection statistic;
for odin and mhlnb towards a larger confidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from doctor.scoring import MahalanobisModel
from doctor.trainer import LogisticClassifier

PERTURB_METHODS = ("alpha", "beta", "odin", "mahalanobis")


@dataclass(frozen=True)
class PerturbSpec:
    epsilon: float = 0.0
    method: str = "alpha"
    temperature: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.method not in PERTURB_METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {PERTURB_METHODS}")


def _branch(raw_logit):
    # +1 where the classifier predicts +1; the tie z = 0 predicts -1
    return np.where(raw_logit > 0, 1.0, -1.0)


def objective(x, method: str, model: LogisticClassifier, temperature: float = 1.0,
              mahalanobis: MahalanobisModel | None = None):
    """Value of the method's objective at ``x`` (scalar or ``(n,)``)."""
    raw = model.logit(x)
    z = raw / temperature
    s = _branch(raw)
    if method == "beta":
        # Pe_hat / (1 - Pe_hat) = exp(-s z) on the predicted branch
        return -s * z
    if method == "alpha":
        # 1 - g = 2 p (1 - p), kept in log space for confident inputs
        log_one_minus_g = np.log(2.0) + log_expit(z) + log_expit(-z)
        return log_one_minus_g - np.log1p(-np.exp(log_one_minus_g))
    if method == "odin":
        return log_expit(s * z)
    if method == "mahalanobis":
        _need(mahalanobis)
        white = _binary_deviation(raw, mahalanobis) @ mahalanobis.whitening.T
        out = -np.einsum("nck,nck->nc", white, white).min(axis=1)
        return out[0] if np.ndim(raw) == 0 else out
    raise ValueError(f"unknown method {method!r}")


def _binary_deviation(raw, mahalanobis):
    """``v - mu_c`` for the two-class softmax ``v``, shape ``(n, C, 2)``.

    Only the smaller probability ``q`` is formed; the larger component enters
    as ``(1 - mu) - q`` so that it never rounds near 1.
    """
    raw = np.atleast_1d(raw)
    q = expit(-np.abs(raw))[:, None]
    pos = (raw > 0)[:, None]
    mu0, mu1 = mahalanobis.class_means[None, :, 0], mahalanobis.class_means[None, :, 1]
    dev0 = np.where(pos, q - mu0, (1 - mu0) - q)
    dev1 = np.where(pos, (1 - mu1) - q, q - mu1)
    return np.stack([dev0, dev1], axis=-1)


def _need(mahalanobis):
    if mahalanobis is None:
        raise ValueError("the mahalanobis objective needs a fitted MahalanobisModel")


def grad_analytic(x, method: str, model: LogisticClassifier, temperature: float = 1.0,
                  mahalanobis: MahalanobisModel | None = None):
    """Closed-form gradient of :func:`objective` w.r.t. ``x``.

    All objectives depend on ``x`` only through the logit, so the gradient is
    ``dObj/dlogit * w``.  At ``w . x + b = 0`` the beta and odin objectives
    have a kink; the gradient of the predicted (-1) branch is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    raw = model.logit(x)
    z = raw / temperature
    s = _branch(raw)
    # derivative of the objective w.r.t. the raw logit w . x + b
    if method == "beta":
        d = -s / temperature
    elif method == "alpha":
        p = expit(z)
        g = p * p + (1 - p) * (1 - p)
        d = (1 - 2 * p) / g / temperature
    elif method == "odin":
        d = s * expit(-s * z) / temperature
    elif method == "mahalanobis":
        _need(mahalanobis)
        p = expit(raw)
        v = np.atleast_2d(np.stack([expit(-raw), p], axis=-1))
        c = mahalanobis.distances(v).argmin(axis=1)
        # dM/dv = -2 S^{-1} (v - mu_c); dv/draw = p (1 - p) [-1, 1]
        W = mahalanobis.whitening
        dv = -2 * ((v - mahalanobis.class_means[c]) @ W.T) @ W
        d = (dv[:, 1] - dv[:, 0]) * np.atleast_1d(p * (1 - p))
        d = d[0] if np.ndim(raw) == 0 else d
    else:
        raise ValueError(f"unknown method {method!r}")
    d = np.asarray(d, dtype=np.float64)
    return d[..., None] * model.weights if d.ndim else d * model.weights


def at_switch(x, model: LogisticClassifier, tol: float = 0.0):
    """True where the input sits on the argmax switch (non-smooth objectives)."""
    return np.abs(model.logit(x)) <= tol


def grad_fd(x, score_fn, h: float = 1e-5):
    """Central finite-difference gradient of a scalar function of one input."""
    if not h > 0:
        raise ValueError("h must be > 0")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        hi, lo = float(score_fn(x + e)), float(score_fn(x - e))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"non-finite score while probing coordinate {i}")
        grad.flat[i] = (hi - lo) / (2 * h)
    return grad


def preprocess(x, spec: PerturbSpec, model: LogisticClassifier,
               mahalanobis: MahalanobisModel | None = None):
    """One sign-gradient step of size ``spec.epsilon``; ``sign(0) = 0``."""
    x = np.asarray(x, dtype=np.float64)
    if spec.epsilon == 0:
        return x.copy()
    g = grad_analytic(x, spec.method, model, spec.temperature, mahalanobis)
    out = np.array(x - spec.epsilon * np.sign(-g), dtype=np.float64)
    # rounding of x +- eps can overshoot the ball by an ulp; pull those back
    over = np.abs(out - x) > spec.epsilon
    while np.any(over):
        out[over] = np.nextafter(out[over], x[over])
        over = np.abs(out - x) > spec.epsilon
    return out
