"""Scalar training objectives.

Every loss is a batch mean so the mixing coefficients stay independent of the
batch size. All functions build on the tape primitives and therefore come
with exact analytic gradients, checked against finite differences in the test
suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels, ndgrad as ng
from .errors import ContractViolation, DimensionError
from .ndgrad import GradTape, Var

BCE_EPS = 1e-7


@dataclass
class LossBreakdown:
    """Per-step (or per-epoch averaged) scalar values of every objective."""

    ortho: float = 0.0
    lac_kl: float = 0.0
    lac_ce: float = 0.0
    ens_ce: float = 0.0
    vac_src_ce: float = 0.0
    ent: float = 0.0
    div: float = 0.0
    im: float = 0.0
    bce_src: float = 0.0
    bce_tgt: float = 0.0
    total_g_txt: float = 0.0
    total_g_vis: float = 0.0
    total_head: float = 0.0
    total_disc: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def mean(items: "list[LossBreakdown]") -> "LossBreakdown":
        if not items:
            return LossBreakdown()
        out = LossBreakdown()
        for f in fields(LossBreakdown):
            setattr(out, f.name, float(np.mean([getattr(b, f.name) for b in items])))
        return out


def _check_labels(labels: np.ndarray, class_count: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ContractViolation(
            f"label out of range [0,{class_count}): {labels.min()}..{labels.max()}"
        )
    return labels


def cross_entropy(tape: GradTape, logits: Var, labels) -> Var:
    """Mean cross-entropy of raw logits via fused log-softmax."""
    labels = _check_labels(labels, logits.value.shape[1])
    if labels.shape != (logits.value.shape[0],):
        raise DimensionError("cross_entropy: one label per row required")
    picked = ng.gather_rows(ng.log_softmax_rows(logits), labels)
    return ng.affine(ng.sum_all(picked), -1.0 / logits.value.shape[0])


def kl_divergence(tape: GradTape, teacher_logits: np.ndarray, student_logits: Var) -> Var:
    """Mean KL(softmax(teacher) || softmax(student)); teacher is held fixed."""
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if teacher_logits.shape != student_logits.value.shape:
        raise DimensionError("kl_divergence: teacher/student shapes differ")
    b = teacher_logits.shape[0]
    p = kernels.softmax_rows(teacher_logits)
    student_ls = ng.log_softmax_rows(student_logits)
    cross = ng.affine(ng.sum_all(ng.mul(tape.const(p), student_ls)), -1.0 / b)
    teacher_ent = float(np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)))
    return ng.add(cross, tape.const(teacher_ent / b))


def ortho_loss(tape: GradTape, f_lac_s: Var, f_vac_s: Var,
               f_lac_t: Var, f_vac_t: Var) -> Var:
    """Squared cross-Gram entries between the two branches, one term per
    domain, averaged over row pairs so the weight gamma is batch-size
    independent.

    Zero exactly when every language-aligned row is orthogonal to every
    vision-specific row within its domain.
    """
    def term(a: Var, b: Var) -> Var:
        m = ng.matmul(a, ng.transpose(b))
        pairs = a.value.shape[0] * b.value.shape[0]
        return ng.affine(ng.sum_all(ng.mul(m, m)), 1.0 / pairs)

    return ng.add(term(f_lac_s, f_vac_s), term(f_lac_t, f_vac_t))


def lac_loss(tape: GradTape, student_t: Var, teacher_t: np.ndarray,
             student_s: Var, labels_s, alpha: float,
             distill: bool = True) -> tuple[Var, float, float]:
    """Distillation toward the frozen teacher on target plus supervised
    cross-entropy on source. Returns (total, kl value, ce value)."""
    parts = []
    kl_value = 0.0
    if distill:
        kl = kl_divergence(tape, teacher_t, student_t)
        kl_value = float(kl.value)
        parts.append(kl)
    ce_value = 0.0
    if student_s.value.shape[0] > 0:
        ce = cross_entropy(tape, student_s, labels_s)
        ce_value = float(ce.value)
        if alpha != 0.0:
            parts.append(ng.affine(ce, alpha))
    total = parts[0] if parts else tape.const(0.0)
    for extra in parts[1:]:
        total = ng.add(total, extra)
    return total, kl_value, ce_value


def info_max_loss(tape: GradTape, ens_t: Var) -> tuple[Var, Var, Var]:
    """(entropy, diversity, entropy - diversity) of the ensemble outputs.

    Mean per-sample entropy pushes individual predictions toward certainty;
    the entropy of the mean prediction (diversity) keeps the marginal class
    distribution spread out.
    """
    b = ens_t.value.shape[0]
    ls = ng.log_softmax_rows(ens_t)
    p = ng.exp(ls)
    ent = ng.affine(ng.sum_all(ng.mul(p, ls)), -1.0 / b)
    qbar = ng.mean_rows(p)
    div = ng.affine(ng.sum_all(ng.xlogx(qbar)), -1.0)
    return ent, div, ng.sub(ent, div)


def vac_loss(tape: GradTape, ens_t: Var, pseudo_t, vac_s: Var, labels_s,
             beta: float, im: Var | None) -> tuple[Var, float, float]:
    """Pseudo-label cross-entropy on the target ensemble, supervised
    cross-entropy on source, plus the information-maximization term."""
    total = cross_entropy(tape, ens_t, pseudo_t)
    ens_ce_value = float(total.value)
    src_ce_value = 0.0
    if vac_s.value.shape[0] > 0:
        src_ce = cross_entropy(tape, vac_s, labels_s)
        src_ce_value = float(src_ce.value)
        if beta != 0.0:
            total = ng.add(total, ng.affine(src_ce, beta))
    if im is not None:
        total = ng.add(total, im)
    return total, ens_ce_value, src_ce_value


def modality_bce(tape: GradTape, pred: Var, labels: np.ndarray) -> Var:
    """Mean binary cross-entropy with predictions clamped to [eps, 1-eps]."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if labels.shape != pred.value.shape:
        raise DimensionError("modality_bce: one 0/1 label per prediction required")
    if np.any((labels != 0.0) & (labels != 1.0)):
        raise ContractViolation("modality_bce: labels must be 0 or 1")
    p = ng.clamp(pred, BCE_EPS, 1.0 - BCE_EPS)
    y = tape.const(labels)
    one_minus_y = tape.const(1.0 - labels)
    term = ng.add(
        ng.mul(y, ng.log(p)),
        ng.mul(one_minus_y, ng.log(ng.affine(p, -1.0, 1.0))),
    )
    return ng.affine(ng.sum_all(term), -1.0 / labels.shape[0])
