"""Modality-separation trainer for unsupervised domain adaptation.

Consumes pre-extracted vision/text feature matrices, splits each vision
feature into a language-aligned and a vision-specific component, trains the
two with branch-specific objectives, aligns them across domains with a
modality discriminator, and emits calibrated ensemble predictions for the
unlabeled target domain.
"""

from .data import FeatureSet, Rng, SynthSpec, gen_synth, read_features, write_features
from .errors import UnimosError
from .eval_cli import Metrics, cli_main, evaluate
from .losses import LossBreakdown
from .model import ModelState, init_model, zero_shot
from .ndgrad import GradTape, Param, Tensor2, finite_diff_check
from .pseudo import DebiasState, EpochPlan
from .trainer import (
    TrainConfig,
    TrainReport,
    infer,
    load_checkpoint,
    lr_schedule,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "DebiasState",
    "EpochPlan",
    "FeatureSet",
    "GradTape",
    "LossBreakdown",
    "Metrics",
    "ModelState",
    "Param",
    "Rng",
    "SynthSpec",
    "Tensor2",
    "TrainConfig",
    "TrainReport",
    "UnimosError",
    "cli_main",
    "evaluate",
    "finite_diff_check",
    "gen_synth",
    "infer",
    "init_model",
    "load_checkpoint",
    "lr_schedule",
    "read_features",
    "save_checkpoint",
    "train",
    "write_features",
    "zero_shot",
]
