"""Training loop with per-group gradient routing, plus inference and checkpoints.

Each step draws one source and one target batch and evaluates every enabled
objective on a single tape. Gradients are then collected separately per
parameter group: the text separator minimizes its distillation loss plus the
weighted orthogonality and target-side discriminator terms; the vision
separator does the same with the vision loss; the bottleneck head and weight
generator see only the vision loss; and the discriminator is trained on
source batches alone.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels, losses as L, model as M, ndgrad as ng, pseudo as P
from .data import FeatureSet, Rng, read_blocks, write_blocks
from .errors import ContractViolation, DimensionError, DivergenceError
from .ndgrad import BatchNormState, GradTape, Param, Tensor2
from .pseudo import DebiasState, EpochPlan

LOSS_CAP = 1e6
DEFAULT_TEMPERATURE = 0.01


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.01
    tau: float = 0.5
    momentum: float = 0.99
    mixup: float = 0.3
    batch: int = 32
    lr0: float = 3e-3
    epochs: int = 50
    sgd_momentum: float = 0.9
    seed: int = 0
    temperature: float = DEFAULT_TEMPERATURE
    bottleneck: int = 256
    cluster_rounds: int = 1
    enable_debias: bool = True
    enable_ortho: bool = True
    enable_im: bool = True
    enable_distill: bool = True
    learnable_w: bool = True
    enable_discriminator: bool = True
    reset_wgen_half: bool = False
    bce_sep_on_source: bool = False

    def validate(self) -> None:
        if min(self.alpha, self.beta, self.gamma, self.tau) < 0:
            raise ContractViolation("alpha, beta, gamma, tau must be non-negative")
        for name in ("mixup", "momentum", "sgd_momentum"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ContractViolation(f"{name} must lie in [0,1]")
        if self.batch < 2:
            raise ContractViolation("batch size must be at least 2")
        if self.epochs < 0 or self.lr0 < 0:
            raise ContractViolation("epochs and lr0 must be non-negative")
        if self.temperature <= 0:
            raise ContractViolation("temperature must be positive")
        if self.bottleneck < 1 or self.cluster_rounds < 1:
            raise ContractViolation("bottleneck and cluster_rounds must be >= 1")

    def canonical_text(self) -> str:
        items = sorted(
            (f.name, getattr(self, f.name)) for f in fields(self)
        )
        return "\n".join(f"{k}={v!r}" for k, v in items) + "\n"

    def config_hash(self) -> int:
        digest = hashlib.sha256(self.canonical_text().encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")


@dataclass
class EpochStats:
    losses: L.LossBreakdown
    lr: float
    mode: str
    w_mean: float
    pseudo_agreement: float
    target_accuracy: float | None = None


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"epochs={len(self.epochs)}"]
        for i, ep in enumerate(self.epochs):
            pre = f"epoch.{i}"
            lines.append(f"{pre}.mode={ep.mode}")
            lines.append(f"{pre}.lr={ep.lr!r}")
            lines.append(f"{pre}.w_mean={ep.w_mean!r}")
            lines.append(f"{pre}.pseudo_agreement={ep.pseudo_agreement!r}")
            if ep.target_accuracy is not None:
                lines.append(f"{pre}.target_accuracy={ep.target_accuracy!r}")
            for key, val in ep.losses.as_dict().items():
                lines.append(f"{pre}.loss.{key}={val!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainReport":
        values: dict[str, str] = {}
        for line in text.splitlines():
            if line.strip():
                key, _, val = line.partition("=")
                values[key] = val
        count = int(values["epochs"])
        report = cls()
        for i in range(count):
            pre = f"epoch.{i}"
            bd = L.LossBreakdown(
                **{
                    f.name: float(values[f"{pre}.loss.{f.name}"])
                    for f in fields(L.LossBreakdown)
                }
            )
            acc = values.get(f"{pre}.target_accuracy")
            report.epochs.append(
                EpochStats(
                    losses=bd,
                    lr=float(values[f"{pre}.lr"]),
                    mode=values[f"{pre}.mode"],
                    w_mean=float(values[f"{pre}.w_mean"]),
                    pseudo_agreement=float(values[f"{pre}.pseudo_agreement"]),
                    target_accuracy=None if acc is None else float(acc),
                )
            )
        return report


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Half-period cosine annealing evaluated once per epoch."""
    if epoch > cfg.epochs or cfg.epochs == 0:
        raise ContractViolation("lr_schedule: epoch beyond configured range")
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


class CyclicSampler:
    """Shuffled cyclic index stream; reshuffles whenever a pass completes."""

    def __init__(self, n: int, rng):
        self._n = n
        self._rng = rng
        self._perm = rng.permutation(n)
        self._pos = 0

    def take(self, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            if self._pos == self._n:
                self._perm = self._rng.permutation(self._n)
                self._pos = 0
            grab = min(count - filled, self._n - self._pos)
            out[filled:filled + grab] = self._perm[self._pos:self._pos + grab]
            self._pos += grab
            filled += grab
        return out


@dataclass
class StepOutcome:
    breakdown: L.LossBreakdown
    debias: DebiasState
    w_mean: float
    group_grads: dict[str, tuple[list[Param], list[np.ndarray]]]


def compute_step(model: M.ModelState, xs: np.ndarray, ys: np.ndarray,
                 xt: np.ndarray, teacher_b: np.ndarray, pseudo_b: np.ndarray,
                 debias: DebiasState, cfg: TrainConfig) -> StepOutcome:
    """Forward pass, loss evaluation and per-group gradients for one step.

    Does not touch parameters; batch-norm running statistics are updated as a
    side effect of the train-mode forward.
    """
    tape = GradTape()
    bd = L.LossBreakdown()

    f_lac_s, f_vac_s = M.separate(tape, model, xs)
    f_lac_t, f_vac_t = M.separate(tape, model, xt)
    lac_s = M.lac_logits(tape, f_lac_s, model)
    lac_t = M.lac_logits(tape, f_lac_t, model)

    if cfg.enable_debias:
        debias = P.debias_update(debias, kernels.softmax_rows(lac_t.value))
        lac_t_detached = P.debias_logits(lac_t.value, debias)
    else:
        lac_t_detached = lac_t.value.copy()

    f_b_s, vac_s = M.vac_logits(tape, f_vac_s, model.head, train=True)
    f_b_t, vac_t = M.vac_logits(tape, f_vac_t, model.head, train=True)

    if cfg.learnable_w:
        w = M.gen_weight(tape, f_vac_t, model.wgen)
    else:
        w = tape.const(np.full((xt.shape[0], 1), 0.5))
    ens_t = M.ensemble_logits(tape, vac_t, lac_t_detached, w)

    ortho = None
    if cfg.enable_ortho:
        ortho = L.ortho_loss(tape, f_lac_s, f_vac_s, f_lac_t, f_vac_t)
        bd.ortho = float(ortho.value)

    lac_total, bd.lac_kl, bd.lac_ce = L.lac_loss(
        tape, lac_t, teacher_b, lac_s, ys, cfg.alpha, cfg.enable_distill
    )

    im = None
    if cfg.enable_im:
        ent, div, im = L.info_max_loss(tape, ens_t)
        bd.ent, bd.div, bd.im = float(ent.value), float(div.value), float(im.value)

    vac_total, bd.ens_ce, bd.vac_src_ce = L.vac_loss(
        tape, ens_t, pseudo_b, vac_s, ys, cfg.beta, im
    )

    bce_src = bce_tgt = None
    if cfg.enable_discriminator:
        bs, bt = xs.shape[0], xt.shape[0]
        pred_s = M.discriminate(tape, ng.concat_rows(f_lac_s, f_vac_s), model.disc)
        bce_src = L.modality_bce(tape, pred_s, np.r_[np.ones(bs), np.zeros(bs)])
        pred_t = M.discriminate(tape, ng.concat_rows(f_lac_t, f_vac_t), model.disc)
        bce_tgt = L.modality_bce(tape, pred_t, np.r_[np.ones(bt), np.zeros(bt)])
        bd.bce_src = float(bce_src.value)
        bd.bce_tgt = float(bce_tgt.value)

    def with_regularizers(base):
        total = base
        if cfg.gamma != 0.0:
            if ortho is not None:
                total = ng.add(total, ng.affine(ortho, cfg.gamma))
            if bce_tgt is not None:
                total = ng.add(total, ng.affine(bce_tgt, cfg.gamma))
            if bce_src is not None and cfg.bce_sep_on_source:
                total = ng.add(total, ng.affine(bce_src, cfg.gamma))
        return total

    group_losses = {
        "g_txt": with_regularizers(lac_total),
        "g_vis": with_regularizers(vac_total),
        "head": vac_total,
    }
    if cfg.learnable_w:
        group_losses["wgen"] = vac_total
    if cfg.enable_discriminator and cfg.gamma != 0.0:
        group_losses["disc"] = ng.affine(bce_src, cfg.gamma)

    bd.total_g_txt = float(group_losses["g_txt"].value)
    bd.total_g_vis = float(group_losses["g_vis"].value)
    bd.total_head = float(group_losses["head"].value)
    if "disc" in group_losses:
        bd.total_disc = float(group_losses["disc"].value)

    for name, value in bd.as_dict().items():
        if not np.isfinite(value) or abs(value) > LOSS_CAP:
            raise ContractViolation(f"loss {name} diverged: {value}")

    groups = model.param_groups()
    grads: dict[str, tuple[list[Param], list[np.ndarray]]] = {}
    for name, loss_var in group_losses.items():
        params = groups[name]
        leaves = [tape.watch(p) for p in params]
        grads[name] = (params, tape.gradients(loss_var, leaves))

    return StepOutcome(bd, debias, float(np.mean(w.value)), grads)


def apply_updates(outcome: StepOutcome, lr: float, sgd_momentum: float) -> None:
    for params, gs in outcome.group_grads.values():
        new_vals, new_vels = ng.sgd_step(
            [p.value for p in params], gs, lr, sgd_momentum,
            [p.velocity for p in params],
        )
        for p, nv, nvel in zip(params, new_vals, new_vels):
            p.value = nv
            p.velocity = nvel


def run_epoch(model: M.ModelState, source: FeatureSet, target: FeatureSet,
              plan: EpochPlan, debias: DebiasState, cfg: TrainConfig, lr: float,
              sampler_s: CyclicSampler, sampler_t: CyclicSampler,
              epoch: int = 0):
    """One pass of ceil(max(Ns,Nt)/B) steps; returns (debias, losses, w_mean)."""
    steps = math.ceil(max(source.count, target.count) / cfg.batch)
    step_breakdowns = []
    w_means = []
    src_feats = source.features.data
    tgt_feats = target.features.data
    for step in range(steps):
        idx_s = sampler_s.take(cfg.batch)
        idx_t = sampler_t.take(cfg.batch)
        try:
            outcome = compute_step(
                model,
                src_feats[idx_s], source.labels[idx_s],
                tgt_feats[idx_t], plan.teacher_t[idx_t], plan.pseudo_t[idx_t],
                debias, cfg,
            )
        except ContractViolation as exc:
            raise DivergenceError(str(exc), epoch * steps + step) from exc
        apply_updates(outcome, lr, cfg.sgd_momentum)
        debias = outcome.debias
        step_breakdowns.append(outcome.breakdown)
        w_means.append(outcome.w_mean)
    return debias, L.LossBreakdown.mean(step_breakdowns), float(np.mean(w_means))


def reset_wgen_half(model: M.ModelState, rng) -> None:
    """Re-initialize a seeded uniform choice of half the weight-generator
    entries: fresh Xavier draws for weight entries, zeros for bias entries."""
    layers = [model.wgen.l1, model.wgen.l2]
    slots = []
    for li, layer in enumerate(layers):
        for pi, param in enumerate((layer.weight, layer.bias)):
            for flat in range(param.value.size):
                slots.append((li, pi, flat))
    chosen = rng.permutation(len(slots))[: len(slots) // 2]
    for slot_id in sorted(chosen):
        li, pi, flat = slots[slot_id]
        layer = layers[li]
        param = (layer.weight, layer.bias)[pi]
        ij = np.unravel_index(flat, param.value.shape)
        if pi == 0:
            fan_in, fan_out = layer.weight.value.shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            param.value[ij] = rng.uniform(-bound, bound)
        else:
            param.value[ij] = 0.0


def _check_inputs(source: FeatureSet, target: FeatureSet, text: Tensor2) -> None:
    if source.labels is None:
        raise ContractViolation("source FeatureSet must be labeled")
    if source.dim != target.dim or source.dim != text.cols:
        raise DimensionError(
            f"feature dims disagree: source {source.dim}, target {target.dim}, "
            f"text {text.cols}"
        )
    if source.class_count != text.rows or target.class_count != text.rows:
        raise DimensionError("class counts disagree with text feature rows")


def train(source: FeatureSet, target: FeatureSet, text: Tensor2,
          cfg: TrainConfig, target_truth: np.ndarray | None = None):
    """Full training run; returns (model, debias, report).

    ``target_truth`` is used for per-epoch evaluation reporting only; it never
    influences an update. Deterministic given (config, data, seed).
    """
    cfg.validate()
    _check_inputs(source, target, text)
    rng = Rng(cfg.seed)
    model = M.init_model(rng, text, cfg.temperature, cfg.bottleneck)
    debias = DebiasState.uniform(text.rows, cfg.momentum, cfg.tau)
    sampler_s = CyclicSampler(source.count, rng)
    sampler_t = CyclicSampler(target.count, rng)
    report = TrainReport()
    prev_centroids = None

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        if cfg.reset_wgen_half and cfg.learnable_w:
            reset_wgen_half(model, rng)
        plan = P.build_epoch_plan(
            model, target.features.data, debias, epoch, cfg.mixup,
            cfg.cluster_rounds, cfg.learnable_w, cfg.enable_debias,
            prev_centroids,
        )
        if plan.centroids is not None:
            prev_centroids = plan.centroids
        debias, mean_losses, w_mean = run_epoch(
            model, source, target, plan, debias, cfg, lr, sampler_s, sampler_t,
            epoch,
        )
        agreement = float(
            np.mean(plan.pseudo_t == np.argmax(plan.teacher_t, axis=1))
        )
        accuracy = None
        if target_truth is not None:
            pred = infer(model, target.features.data, debias, cfg.mixup).labels
            accuracy = float(np.mean(pred == np.asarray(target_truth)))
        report.epochs.append(
            EpochStats(mean_losses, lr, plan.mode, w_mean, agreement, accuracy)
        )
    return model, debias, report


@dataclass
class InferResult:
    labels: np.ndarray
    mixed_logits: np.ndarray
    lac_logits: np.ndarray
    vac_logits: np.ndarray
    weights: np.ndarray


def infer(model: M.ModelState, features, debias: DebiasState,
          lam: float = 0.3) -> InferResult:
    """Fixed-ratio mix of the vision logits and debiased language logits."""
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation("infer: lam must lie in [0,1]")
    feats = features.features.data if isinstance(features, FeatureSet) else features
    feats = np.asarray(feats, dtype=np.float64)
    ev = M.eval_forward(model, feats)
    lac_deb = P.debias_logits(ev["lac"], debias)
    mixed = lam * ev["vac"] + (1.0 - lam) * lac_deb
    labels = np.argmax(mixed, axis=1).astype(np.int32)
    return InferResult(labels, mixed, lac_deb, ev["vac"], ev["w"])


# ---------------------------------------------------------------------------
# checkpoints (version-2 block container)
# ---------------------------------------------------------------------------

def _model_blocks(model: M.ModelState, debias: DebiasState) -> dict[str, np.ndarray]:
    blocks: dict[str, np.ndarray] = {
        "text_features": model.text_features.data,
        "temperature": np.array([[model.temperature]]),
        "debias.p_hat": debias.p_hat[None, :],
        "debias.momentum": np.array([[debias.momentum]]),
        "debias.tau": np.array([[debias.tau]]),
    }
    for group in model.param_groups().values():
        for p in group:
            blocks[p.name] = p.value
    bn = model.head.bn
    blocks["head.bn.running_mean"] = bn.running_mean
    blocks["head.bn.running_var"] = bn.running_var
    return blocks


def save_checkpoint(path, model: M.ModelState, debias: DebiasState,
                    cfg: TrainConfig) -> None:
    write_blocks(path, _model_blocks(model, debias), cfg.config_hash())


def load_checkpoint(path) -> tuple[M.ModelState, DebiasState, int]:
    blocks, config_hash = read_blocks(path)

    def linear(prefix: str) -> M.Linear:
        bias = None
        if f"{prefix}.bias" in blocks:
            bias = Param(blocks[f"{prefix}.bias"], f"{prefix}.bias")
        return M.Linear(
            Param(blocks[f"{prefix}.weight"], f"{prefix}.weight"), bias
        )

    bn = BatchNormState(blocks["head.bn.gamma"].shape[1])
    bn.gamma = Param(blocks["head.bn.gamma"], "head.bn.gamma")
    bn.beta = Param(blocks["head.bn.beta"], "head.bn.beta")
    bn.running_mean = blocks["head.bn.running_mean"]
    bn.running_var = blocks["head.bn.running_var"]

    model = M.ModelState(
        g_txt=linear("g_txt"),
        g_vis=linear("g_vis"),
        head=M.VacHead(linear("head.phi1"), bn, linear("head.phi2")),
        wgen=M.WeightGen(linear("wgen.l1"), linear("wgen.l2")),
        disc=M.Discriminator(linear("disc.l1"), linear("disc.l2")),
        text_features=Tensor2(blocks["text_features"]),
        temperature=float(blocks["temperature"][0, 0]),
    )
    debias = DebiasState(
        blocks["debias.p_hat"][0].copy(),
        float(blocks["debias.momentum"][0, 0]),
        float(blocks["debias.tau"][0, 0]),
    )
    return model, debias, config_hash
