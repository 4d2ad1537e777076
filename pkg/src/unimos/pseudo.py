"""Epoch-level target supervision.

Before each epoch the trainer freezes a plan for the whole target set:
teacher scores distilled from the raw features, debiased language-branch
logits, and pseudo-labels that alternate between a centroid-clustering pass
(odd epochs) and a plain mixed-output argmax (even epochs). Alternating the
two label sources keeps errors from one route from compounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractViolation, DegenerateVectorError, PseudoLabelError
from .model import ModelState, eval_forward

_PHAT_FLOOR = 1e-12
_MASS_FLOOR = 1e-8


@dataclass(frozen=True)
class DebiasState:
    """Momentum-averaged class-probability estimate used for logit debiasing."""

    p_hat: np.ndarray
    momentum: float
    tau: float

    @classmethod
    def uniform(cls, class_count: int, momentum: float, tau: float) -> "DebiasState":
        if not 0.0 <= momentum <= 1.0:
            raise ContractViolation("debias momentum must lie in [0,1]")
        if tau < 0.0:
            raise ContractViolation("debias tau must be non-negative")
        return cls(np.full(class_count, 1.0 / class_count), momentum, tau)


def debias_update(state: DebiasState, batch_probs: np.ndarray) -> DebiasState:
    """Exponential moving average toward the batch-mean probability vector."""
    probs = np.asarray(batch_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != state.p_hat.shape[0]:
        raise ContractViolation("debias_update: batch of probability rows required")
    if np.any(probs < 0.0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ContractViolation("debias_update: rows are not probability vectors")
    m = state.momentum
    new = m * state.p_hat + (1.0 - m) * probs.mean(axis=0)
    if np.any(new < _PHAT_FLOOR):
        new = np.maximum(new, _PHAT_FLOOR)
        new = new / new.sum()
    return DebiasState(new, state.momentum, state.tau)


def debias_logits(lac_logits_t: np.ndarray, state: DebiasState) -> np.ndarray:
    """Subtract tau * log(p_hat) from every row."""
    logits = np.asarray(lac_logits_t, dtype=np.float64)
    return logits - state.tau * np.log(np.maximum(state.p_hat, _PHAT_FLOOR))[None, :]


def teacher_scores(f_v_t: np.ndarray, model: ModelState) -> np.ndarray:
    """Mean-centered cosine logits of the raw features; each row sums to 0."""
    f_v_t = np.asarray(f_v_t, dtype=np.float64)
    if np.min(kernels.row_norms(f_v_t)) <= 0:
        raise DegenerateVectorError("teacher_scores: zero-norm feature row")
    logits = kernels.cosine_rows(f_v_t, model.text_features.data) / model.temperature
    return logits - logits.mean(axis=1, keepdims=True)


def centroids(f_b_t: np.ndarray, ens_probs_t: np.ndarray,
              prev: np.ndarray | None = None) -> np.ndarray:
    """Probability-weighted class centroids of the bottleneck features.

    Classes with negligible probability mass keep their previous centroid, or
    stay at the zero vector on the first computation (such rows are skipped by
    cluster_labels).
    """
    f_b = np.asarray(f_b_t, dtype=np.float64)
    probs = np.asarray(ens_probs_t, dtype=np.float64)
    if np.any(probs < 0.0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ContractViolation("centroids: rows are not probability vectors")
    k = probs.shape[1]
    mass = probs.sum(axis=0)
    phi = np.zeros((k, f_b.shape[1]))
    for c in range(k):
        if mass[c] < _MASS_FLOOR:
            if prev is not None:
                phi[c] = prev[c]
            continue
        phi[c] = (probs[:, c] @ f_b) / mass[c]
    return phi


def cluster_labels(f_b_t: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Nearest centroid by cosine similarity; ties go to the lowest class."""
    f_b = np.asarray(f_b_t, dtype=np.float64)
    if np.min(kernels.row_norms(f_b)) <= 0:
        raise DegenerateVectorError("cluster_labels: zero-norm feature row")
    valid = kernels.row_norms(np.asarray(phi, dtype=np.float64)) > 0
    if not valid.any():
        raise PseudoLabelError("cluster_labels: every centroid is degenerate")
    valid_idx = np.flatnonzero(valid)
    sims = kernels.cosine_rows(f_b, np.asarray(phi, dtype=np.float64)[valid_idx])
    return valid_idx[np.argmax(sims, axis=1)].astype(np.int32)


def mixed_pseudo_labels(vac_t: np.ndarray, debiased_lac_t: np.ndarray,
                        lam: float) -> np.ndarray:
    """Argmax of the fixed-ratio mix of both branches' logits."""
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation("mixed_pseudo_labels: lam must lie in [0,1]")
    mixed = lam * np.asarray(vac_t, dtype=np.float64) + (1.0 - lam) * np.asarray(
        debiased_lac_t, dtype=np.float64
    )
    return np.argmax(mixed, axis=1).astype(np.int32)


MODE_MIXED = "mixed"
MODE_CLUSTERED = "clustered"


@dataclass
class EpochPlan:
    """Frozen per-epoch artifacts for the whole target set."""

    teacher_t: np.ndarray
    centroids: np.ndarray | None
    pseudo_t: np.ndarray
    mode: str


def build_epoch_plan(model: ModelState, target_features: np.ndarray,
                     debias: DebiasState, epoch: int, mixup: float,
                     cluster_rounds: int, learnable_w: bool, enable_debias: bool,
                     prev_centroids: np.ndarray | None) -> EpochPlan:
    """Full-dataset eval pass producing teacher scores and pseudo-labels.

    The per-sample ensemble weights are whatever the weight generator outputs
    right now, i.e. frozen from the end of the previous epoch.
    """
    teacher = teacher_scores(target_features, model)
    ev = eval_forward(model, target_features, learnable_w=learnable_w)
    lac_deb = debias_logits(ev["lac"], debias) if enable_debias else ev["lac"]

    if epoch % 2 == 0:
        pseudo = mixed_pseudo_labels(ev["vac"], lac_deb, mixup)
        return EpochPlan(teacher, None, pseudo, MODE_MIXED)

    ens = ev["w"] * ev["vac"] + (1.0 - ev["w"]) * lac_deb
    probs = kernels.softmax_rows(ens)
    phi = centroids(ev["f_b"], probs, prev_centroids)
    labels = cluster_labels(ev["f_b"], phi)
    for _ in range(cluster_rounds - 1):
        onehot = np.eye(probs.shape[1])[labels]
        phi = centroids(ev["f_b"], onehot, phi)
        labels = cluster_labels(ev["f_b"], phi)
    return EpochPlan(teacher, phi, labels, MODE_CLUSTERED)
