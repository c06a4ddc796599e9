"""Misclassification detection from soft predictions.

Score functions for deciding whether to trust a classifier's prediction,
ROC-style evaluation of those decisions, and a synthetic two-Gaussian
benchmark where the true error probability is known in closed form.
"""

from doctor.scoring import (
    MahalanobisModel,
    InvalidDistributionError,
    doctor_alpha_score,
    doctor_beta_score,
    g_hat,
    mahalanobis_fit,
    mahalanobis_score,
    odin_score,
    pe_hat,
    rejection_score,
    softmax,
    sr_score,
)
from doctor.metrics import (
    ConfusionCounts,
    RocCurve,
    auroc,
    confusion,
    frr_at_trr,
    roc_exact,
    roc_grid,
    type_errors,
)

__version__ = "0.1.0"

__all__ = [
    "ConfusionCounts",
    "InvalidDistributionError",
    "MahalanobisModel",
    "RocCurve",
    "auroc",
    "confusion",
    "doctor_alpha_score",
    "doctor_beta_score",
    "frr_at_trr",
    "g_hat",
    "mahalanobis_fit",
    "mahalanobis_score",
    "odin_score",
    "pe_hat",
    "rejection_score",
    "roc_exact",
    "roc_grid",
    "softmax",
    "sr_score",
    "type_errors",
]
