"""Trainable networks and their forward passes.

The model splits each incoming vision feature into a language-aligned part
(via the text separator) and a vision-specific part (via the vision
separator). The language branch is scored by cosine similarity against the
frozen per-class text features; the vision branch runs through a bottleneck
classifier. A weight generator produces per-sample ensemble weights and a
modality discriminator tells the two branches apart.
"""

from __future__ import annotations

import numpy as np

from . import kernels, ndgrad as ng
from .errors import ContractViolation, DegenerateVectorError, DimensionError
from .ndgrad import BatchNormState, GradTape, Param, Tensor2, Var

HIDDEN_DIM = 256  # width of the weight-generator and discriminator hidden layer


class Linear:
    def __init__(self, weight: Param, bias: Param | None):
        self.weight = weight
        self.bias = bias

    @classmethod
    def xavier(cls, rng, fan_in: int, fan_out: int, name: str,
               use_bias: bool = True) -> "Linear":
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = np.array(
            [[rng.uniform(-bound, bound) for _ in range(fan_out)] for _ in range(fan_in)]
        )
        bias = Param(np.zeros((1, fan_out)), f"{name}.bias") if use_bias else None
        return cls(Param(w, f"{name}.weight"), bias)

    @classmethod
    def noisy_identity(cls, rng, dim: int, sigma: float, name: str) -> "Linear":
        w = np.eye(dim) + sigma * np.array(
            [[rng.next_gaussian() for _ in range(dim)] for _ in range(dim)]
        )
        return cls(Param(w, f"{name}.weight"), Param(np.zeros((1, dim)), f"{name}.bias"))

    def __call__(self, tape: GradTape, x) -> Var:
        return ng.linear_apply(tape, x, self.weight, self.bias)

    def params(self) -> list[Param]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


class VacHead:
    """Bottleneck classifier for the vision branch: linear, batch norm, linear."""

    def __init__(self, phi1: Linear, bn: BatchNormState, phi2: Linear):
        self.phi1 = phi1
        self.bn = bn
        self.phi2 = phi2

    def params(self) -> list[Param]:
        return self.phi1.params() + [self.bn.gamma, self.bn.beta] + self.phi2.params()


class WeightGen:
    """Two linear layers ending in a sigmoid; one weight in (0,1) per sample."""

    def __init__(self, l1: Linear, l2: Linear):
        self.l1 = l1
        self.l2 = l2

    def params(self) -> list[Param]:
        return self.l1.params() + self.l2.params()


class Discriminator:
    """Two linear layers with a ReLU between, sigmoid output in (0,1)."""

    def __init__(self, l1: Linear, l2: Linear):
        self.l1 = l1
        self.l2 = l2

    def params(self) -> list[Param]:
        return self.l1.params() + self.l2.params()


class ModelState:
    """All trainable parameters plus the frozen text features and temperature."""

    def __init__(self, g_txt, g_vis, head, wgen, disc, text_features: Tensor2,
                 temperature: float):
        if temperature <= 0:
            raise ContractViolation("temperature must be positive")
        if np.min(kernels.row_norms(text_features.data)) <= 0:
            raise DegenerateVectorError("text feature row with zero norm")
        self.g_txt = g_txt
        self.g_vis = g_vis
        self.head = head
        self.wgen = wgen
        self.disc = disc
        self.text_features = text_features
        self.temperature = float(temperature)

    @property
    def feature_dim(self) -> int:
        return self.text_features.cols

    @property
    def class_count(self) -> int:
        return self.text_features.rows

    @property
    def bottleneck_dim(self) -> int:
        return self.head.phi2.weight.value.shape[0]

    def param_groups(self) -> dict[str, list[Param]]:
        return {
            "g_txt": self.g_txt.params(),
            "g_vis": self.g_vis.params(),
            "head": self.head.params(),
            "wgen": self.wgen.params(),
            "disc": self.disc.params(),
        }

    def all_params(self) -> list[Param]:
        return [p for ps in self.param_groups().values() for p in ps]


SEPARATOR_INIT_NOISE = 1e-3


def init_model(rng, text_features: Tensor2, temperature: float,
               bottleneck_dim: int, hidden: int = HIDDEN_DIM) -> ModelState:
    """Fresh model. Separators start as noisy identities so both branches
    initially reproduce the input feature; everything else is Xavier uniform."""
    d_v = text_features.cols
    g_txt = Linear.noisy_identity(rng, d_v, SEPARATOR_INIT_NOISE, "g_txt")
    g_vis = Linear.noisy_identity(rng, d_v, SEPARATOR_INIT_NOISE, "g_vis")
    # no bias before batch norm: the normalization shift would cancel it and
    # leave a parameter with an exactly-zero gradient
    head = VacHead(
        Linear.xavier(rng, d_v, bottleneck_dim, "head.phi1", use_bias=False),
        BatchNormState(bottleneck_dim),
        Linear.xavier(rng, bottleneck_dim, text_features.rows, "head.phi2"),
    )
    head.bn.gamma.name = "head.bn.gamma"
    head.bn.beta.name = "head.bn.beta"
    wgen = WeightGen(
        Linear.xavier(rng, d_v, hidden, "wgen.l1"),
        Linear.xavier(rng, hidden, 1, "wgen.l2"),
    )
    disc = Discriminator(
        Linear.xavier(rng, d_v, hidden, "disc.l1"),
        Linear.xavier(rng, hidden, 1, "disc.l2"),
    )
    return ModelState(g_txt, g_vis, head, wgen, disc, text_features, temperature)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def separate(tape: GradTape, model: ModelState, f_v) -> tuple[Var, Var]:
    """Split vision features into language-aligned and vision-specific parts."""
    f_v = f_v if isinstance(f_v, Var) else tape.const(np.asarray(f_v, dtype=np.float64))
    if f_v.value.shape[1] != model.feature_dim:
        raise DimensionError(
            f"separate: expected {model.feature_dim} columns, got {f_v.value.shape[1]}"
        )
    return model.g_txt(tape, f_v), model.g_vis(tape, f_v)


def lac_logits(tape: GradTape, f_lac: Var, model: ModelState) -> Var:
    """Cosine similarity of each row against every class text feature, / T."""
    sims = ng.cosine_rows(f_lac, model.text_features.data)
    return ng.affine(sims, 1.0 / model.temperature)


def vac_logits(tape: GradTape, f_vac: Var, head: VacHead, train: bool) -> tuple[Var, Var]:
    """Bottleneck features and class logits for the vision branch."""
    f_b = ng.batchnorm_apply(tape, head.phi1(tape, f_vac), head.bn, train)
    return f_b, head.phi2(tape, f_b)


def gen_weight(tape: GradTape, f_vac: Var, wgen: WeightGen) -> Var:
    """Per-sample ensemble weight, strictly inside (0,1)."""
    return ng.sigmoid(wgen.l2(tape, wgen.l1(tape, f_vac)))


def discriminate(tape: GradTape, f: Var, disc: Discriminator) -> Var:
    """Probability that each row is a language-aligned component (label 1)."""
    return ng.sigmoid(disc.l2(tape, ng.relu(disc.l1(tape, f))))


def ensemble_logits(tape: GradTape, vac: Var, lac_detached: np.ndarray, w) -> Var:
    """w*vac + (1-w)*lac; gradients reach vac and w, never the lac producer.

    ``lac_detached`` is a plain array by construction, so no gradient can flow
    back into whatever computed it.
    """
    lac_detached = np.asarray(lac_detached, dtype=np.float64)
    if lac_detached.shape != vac.value.shape:
        raise DimensionError("ensemble_logits: vac/lac shapes differ")
    wv = w if isinstance(w, Var) else tape.const(np.asarray(w, dtype=np.float64))
    if wv.value.shape != (vac.value.shape[0], 1):
        raise DimensionError("ensemble_logits: w must be one scalar per row")
    if np.any(wv.value <= 0.0) or np.any(wv.value >= 1.0):
        raise ContractViolation("ensemble_logits: weights must lie strictly in (0,1)")
    one_minus_w = ng.affine(wv, -1.0, 1.0)
    return ng.add(ng.mul(wv, vac), ng.mul(one_minus_w, tape.const(lac_detached)))


def zero_shot_features(f_v: np.ndarray, text_features) -> np.ndarray:
    """Class with the highest cosine similarity per row; ties to lowest index."""
    f_v = np.asarray(f_v, dtype=np.float64)
    text = text_features.data if isinstance(text_features, Tensor2) else np.asarray(
        text_features, dtype=np.float64
    )
    if f_v.ndim != 2 or f_v.shape[1] != text.shape[1]:
        raise DimensionError("zero_shot: feature dim mismatch")
    if np.min(kernels.row_norms(f_v)) <= 0:
        raise DegenerateVectorError("zero_shot: zero-norm feature row")
    if np.min(kernels.row_norms(text)) <= 0:
        raise DegenerateVectorError("zero_shot: zero-norm text row")
    sims = kernels.cosine_rows(f_v, text)
    return np.argmax(sims, axis=1).astype(np.int32)


def zero_shot(f_v: np.ndarray, model: ModelState) -> np.ndarray:
    return zero_shot_features(f_v, model.text_features)


def eval_forward(model: ModelState, features: np.ndarray, learnable_w: bool = True):
    """Whole-dataset forward in eval mode (running statistics, no recording).

    Returns a dict of plain arrays: f_lac, f_vac, lac, f_b, vac, w.
    """
    tape = GradTape(recording=False)
    f_lac, f_vac = separate(tape, model, features)
    lac = lac_logits(tape, f_lac, model)
    f_b, vac = vac_logits(tape, f_vac, model.head, train=False)
    if learnable_w:
        w = gen_weight(tape, f_vac, model.wgen).value
    else:
        w = np.full((features.shape[0], 1), 0.5)
    return {
        "f_lac": f_lac.value,
        "f_vac": f_vac.value,
        "lac": lac.value,
        "f_b": f_b.value,
        "vac": vac.value,
        "w": w,
    }
