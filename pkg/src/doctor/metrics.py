"""Rejection bookkeeping, ROC curves and AUROC.

Items are given as parallel arrays: ``scores`` (reject iff score > threshold,
``+inf`` allowed) and ``errors`` (1 where the classifier's prediction was
wrong).  FRR is the fraction of correct predictions rejected (Type-I error);
TRR the fraction of wrong predictions rejected (``1 -`` Type-II error).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

GRID_RESOLUTION = 10_000
GRID_MIN_POINTS = 2
GRID_MAX_POINTS = 200_000


class SingleClassError(ValueError):
    """Both correct (E=0) and wrong (E=1) predictions are required."""


@dataclass(frozen=True)
class ScoredItems:
    scores: np.ndarray
    errors: np.ndarray
    ids: np.ndarray | None = None

    def __len__(self):
        return self.scores.shape[0]


def _items(scores, errors):
    s = np.asarray(scores, dtype=np.float64).ravel()
    e = np.asarray(errors).ravel()
    if s.shape != e.shape:
        raise ValueError("scores and errors differ in length")
    if s.size == 0:
        raise ValueError("no items")
    if np.any(np.isnan(s)) or np.any(s == -np.inf):
        raise ValueError("scores must be finite or +inf")
    if not np.all(np.isin(e, (0, 1))):
        raise ValueError("error bits must be 0 or 1")
    return s, e.astype(bool)


@dataclass(frozen=True)
class ConfusionCounts:
    fr: int  # rejected, prediction was right
    tr: int  # rejected, prediction was wrong
    fa: int  # accepted, prediction was wrong
    ta: int  # accepted, prediction was right

    @property
    def total(self) -> int:
        return self.fr + self.tr + self.fa + self.ta


def confusion(scores, errors, threshold: float) -> ConfusionCounts:
    s, e = _items(scores, errors)
    rej = s > threshold
    return ConfusionCounts(
        fr=int(np.sum(rej & ~e)),
        tr=int(np.sum(rej & e)),
        fa=int(np.sum(~rej & e)),
        ta=int(np.sum(~rej & ~e)),
    )


def type_errors(c: ConfusionCounts) -> tuple[float, float]:
    """``(eps0, eps1) = (FR / #(E=0), FA / #(E=1))``."""
    n0, n1 = c.fr + c.ta, c.fa + c.tr
    if n0 == 0 or n1 == 0:
        raise SingleClassError(f"type errors undefined with #(E=0)={n0}, #(E=1)={n1}")
    return c.fr / n0, c.fa / n1


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by non-decreasing FRR.

    ``fr``/``tr`` hold integer rejection counts when the curve was built from
    items; hand-built curves carry rates only.
    """

    thresholds: np.ndarray
    frr: np.ndarray
    trr: np.ndarray
    mode: str = "exact"
    fr: np.ndarray | None = None
    tr: np.ndarray | None = None
    n0: int | None = None
    n1: int | None = None
    fallback: bool = False

    def __len__(self):
        return self.frr.shape[0]

    @classmethod
    def from_counts(cls, thresholds, fr, tr, n0, n1, mode, fallback=False):
        fr = np.asarray(fr, dtype=np.int64)
        tr = np.asarray(tr, dtype=np.int64)
        return cls(np.asarray(thresholds, dtype=np.float64), fr / n0, tr / n1,
                   mode, fr, tr, int(n0), int(n1), fallback)

    @classmethod
    def from_rates(cls, frr, trr, thresholds=None, mode="exact"):
        frr = np.asarray(frr, dtype=np.float64)
        trr = np.asarray(trr, dtype=np.float64)
        if thresholds is None:
            thresholds = np.full(frr.shape, np.nan)
        if np.any(np.diff(frr) < 0) or np.any(np.diff(trr) < 0):
            raise ValueError("curve points must be ordered by non-decreasing FRR and TRR")
        return cls(np.asarray(thresholds, dtype=np.float64), frr, trr, mode)


def _split_counts(s, e):
    n1 = int(e.sum())
    n0 = int(e.size - n1)
    if n0 == 0 or n1 == 0:
        raise SingleClassError(f"ROC needs both outcomes; got #(E=0)={n0}, #(E=1)={n1}")
    return n0, n1


def roc_exact(scores, errors) -> RocCurve:
    """One operating point per distinct score, plus the two endpoints.

    The threshold of each point is the distinct score itself (nothing at or
    below it rejected), so the first point rejects nothing and a final
    ``-inf`` threshold rejects everything.
    """
    s, e = _items(scores, errors)
    n0, n1 = _split_counts(s, e)
    uniq, inv = np.unique(s, return_inverse=True)
    w1 = np.bincount(inv, weights=e, minlength=uniq.size).astype(np.int64)
    w0 = np.bincount(inv, weights=~e, minlength=uniq.size).astype(np.int64)
    # descending thresholds; counts strictly above each threshold
    w1, w0, uniq = w1[::-1], w0[::-1], uniq[::-1]
    tr = np.concatenate([[0], np.cumsum(w1)])
    fr = np.concatenate([[0], np.cumsum(w0)])
    thresholds = np.concatenate([uniq, [-np.inf]])
    return RocCurve.from_counts(thresholds, fr, tr, n0, n1, "exact")


def grid_size(lo: float, hi: float, resolution: int = GRID_RESOLUTION) -> int:
    """``(max - min) * resolution`` thresholds, clamped to the allowed range."""
    n = int(round((hi - lo) * resolution))
    return int(min(max(n, GRID_MIN_POINTS), GRID_MAX_POINTS))


def roc_grid(scores, errors, resolution: int = GRID_RESOLUTION) -> RocCurve:
    """Sweep evenly spaced thresholds over ``[min score, max score]``.

    The interval is taken over finite scores.  A degenerate interval falls
    back to :func:`roc_exact` with ``fallback=True``.
    """
    s, e = _items(scores, errors)
    n0, n1 = _split_counts(s, e)
    finite = s[np.isfinite(s)]
    if finite.size == 0 or finite.min() == finite.max():
        warnings.warn("degenerate score interval; using the exact ROC", RuntimeWarning, stacklevel=2)
        exact = roc_exact(s, e)
        return RocCurve.from_counts(exact.thresholds, exact.fr, exact.tr, n0, n1, "exact", fallback=True)
    lo, hi = float(finite.min()), float(finite.max())
    grid = np.linspace(hi, lo, grid_size(lo, hi, resolution))
    s1, s0 = np.sort(s[e]), np.sort(s[~e])
    thresholds = np.concatenate([[np.inf], grid, [-np.inf]])
    tr = n1 - np.searchsorted(s1, thresholds, side="right")
    fr = n0 - np.searchsorted(s0, thresholds, side="right")
    return RocCurve.from_counts(thresholds, fr, tr, n0, n1, "grid")


def auroc(curve: RocCurve) -> float:
    """Trapezoidal area under TRR as a function of FRR.

    With integer counts the area is accumulated exactly in integers, so an
    exact curve reproduces the Mann-Whitney statistic bit for bit.
    """
    if curve.fr is not None:
        fr, tr = curve.fr, curve.tr
        num = int(np.sum(np.diff(fr) * (tr[1:] + tr[:-1])))
        return num / (2 * curve.n0 * curve.n1)
    return float(np.sum(np.diff(curve.frr) * (curve.trr[1:] + curve.trr[:-1])) / 2)


def auroc_se(auc: float, n0: int, n1: int) -> float:
    """Hanley-McNeil standard error of an AUROC estimate."""
    q1 = auc / (2 - auc)
    q2 = 2 * auc * auc / (1 + auc)
    var = (auc * (1 - auc) + (n1 - 1) * (q1 - auc * auc) + (n0 - 1) * (q2 - auc * auc)) / (n0 * n1)
    return float(np.sqrt(max(var, 0.0)))


class FrrAtTrr(NamedTuple):
    frr: float
    saturated: bool


def frr_at_trr(curve: RocCurve, target: float = 0.95) -> FrrAtTrr:
    """Smallest FRR reaching ``TRR >= target``, interpolating between points."""
    frr, trr = curve.frr, curve.trr
    hit = np.flatnonzero(trr >= target)
    if hit.size == 0:
        return FrrAtTrr(1.0, True)
    i = int(hit[0])
    if i == 0 or trr[i] == target:
        return FrrAtTrr(float(frr[i]), False)
    f0, f1, t0, t1 = frr[i - 1], frr[i], trr[i - 1], trr[i]
    return FrrAtTrr(float(f0 + (target - t0) * (f1 - f0) / (t1 - t0)), False)


def histogram(scores, errors, bins: int = 10):
    """Bin edges and per-bin counts among correct (E=0) and wrong (E=1) items.

    ``+inf`` scores land in the last bin.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    s, e = _items(scores, errors)
    finite = s[np.isfinite(s)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    clipped = np.where(np.isfinite(s), s, hi)
    idx = np.clip(np.searchsorted(edges, clipped, side="right") - 1, 0, bins - 1)
    c0 = np.bincount(idx[~e], minlength=bins)
    c1 = np.bincount(idx[e], minlength=bins)
    return edges, c0, c1
