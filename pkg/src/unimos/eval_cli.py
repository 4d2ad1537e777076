"""Command-line surface and accuracy metrics.

Every subcommand is a thin shell over the library: the same results are
reachable through direct calls. Reports are key=value lines so regression
diffs stay readable.

Exit codes: 0 success, 1 usage, 2 data error, 3 divergence.

The environment variable UNIMOS_THREADS caps worker threads; 0 (the default)
selects the single-threaded reference mode. Every reduction in this package
is fixed-order, so any permitted value produces identical results.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import model as M, trainer as T
from .data import (
    SOURCE,
    TARGET,
    FeatureSet,
    SynthSpec,
    gen_synth,
    read_features,
    write_features,
)
from .errors import DimensionError, DivergenceError, UnimosError
from .ndgrad import Tensor2


@dataclass
class Metrics:
    overall: float
    per_class: list[float | None]
    confusion: np.ndarray
    lac_accuracy: float | None = None
    vac_accuracy: float | None = None
    ensemble_accuracy: float | None = None

    def __eq__(self, other):
        return (
            isinstance(other, Metrics)
            and self.overall == other.overall
            and self.per_class == other.per_class
            and np.array_equal(self.confusion, other.confusion)
            and self.lac_accuracy == other.lac_accuracy
            and self.vac_accuracy == other.vac_accuracy
            and self.ensemble_accuracy == other.ensemble_accuracy
        )


def evaluate(pred, truth, class_count: int) -> Metrics:
    """Exact counting metrics; per-class accuracy is diagonal over row sum."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DimensionError("evaluate: pred and truth must be equal-length vectors")
    if pred.size == 0:
        raise DimensionError("evaluate: empty input")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.min() < 0 or arr.max() >= class_count:
            raise DimensionError(f"evaluate: {name} label outside [0,{class_count})")
    confusion = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(confusion, (truth, pred), 1)
    per_class: list[float | None] = []
    for k in range(class_count):
        row = confusion[k].sum()
        per_class.append(float(confusion[k, k] / row) if row else None)
    return Metrics(float(np.trace(confusion) / pred.size), per_class, confusion)


def metrics_to_text(m: Metrics) -> str:
    lines = [
        f"overall={m.overall!r}",
        f"class_count={len(m.per_class)}",
    ]
    for k, acc in enumerate(m.per_class):
        lines.append(f"per_class.{k}={'absent' if acc is None else repr(acc)}")
    for k in range(len(m.per_class)):
        lines.append(f"confusion.{k}={','.join(str(v) for v in m.confusion[k])}")
    for name in ("lac_accuracy", "vac_accuracy", "ensemble_accuracy"):
        val = getattr(m, name)
        if val is not None:
            lines.append(f"{name}={val!r}")
    return "\n".join(lines) + "\n"


def metrics_from_text(text: str) -> Metrics:
    values: dict[str, str] = {}
    for line in text.splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            values[key] = val
    k = int(values["class_count"])
    per_class = [
        None if values[f"per_class.{i}"] == "absent" else float(values[f"per_class.{i}"])
        for i in range(k)
    ]
    confusion = np.array(
        [[int(v) for v in values[f"confusion.{i}"].split(",")] for i in range(k)],
        dtype=np.int64,
    )
    extras = {
        name: float(values[name]) if name in values else None
        for name in ("lac_accuracy", "vac_accuracy", "ensemble_accuracy")
    }
    return Metrics(float(values["overall"]), per_class, confusion, **extras)


# ---------------------------------------------------------------------------
# CLI plumbing
# ---------------------------------------------------------------------------

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--momentum", type=float, default=0.99,
                   help="debias EMA momentum")
    p.add_argument("--mixup", type=float, default=0.3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--sgd-momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=T.DEFAULT_TEMPERATURE)
    p.add_argument("--bottleneck", type=int, default=256)
    p.add_argument("--cluster-rounds", type=int, default=1)
    p.add_argument("--no-debias", action="store_true")
    p.add_argument("--no-ortho", action="store_true")
    p.add_argument("--no-im", action="store_true")
    p.add_argument("--no-distill", action="store_true")
    p.add_argument("--fixed-w", action="store_true",
                   help="replace the learnable ensemble weight with 0.5")
    p.add_argument("--no-discriminator", action="store_true")
    p.add_argument("--reset-wgen-half", action="store_true")
    p.add_argument("--bce-sep-on-source", action="store_true")


def _config_from_args(args) -> T.TrainConfig:
    return T.TrainConfig(
        alpha=args.alpha, beta=args.beta, gamma=args.gamma, tau=args.tau,
        momentum=args.momentum, mixup=args.mixup, batch=args.batch,
        lr0=args.lr, epochs=args.epochs, sgd_momentum=args.sgd_momentum,
        seed=args.seed, temperature=args.temperature,
        bottleneck=args.bottleneck, cluster_rounds=args.cluster_rounds,
        enable_debias=not args.no_debias, enable_ortho=not args.no_ortho,
        enable_im=not args.no_im, enable_distill=not args.no_distill,
        learnable_w=not args.fixed_w,
        enable_discriminator=not args.no_discriminator,
        reset_wgen_half=args.reset_wgen_half,
        bce_sep_on_source=args.bce_sep_on_source,
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="unimos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic two-domain benchmark")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--per-domain", type=int, default=500)
    p.add_argument("--proto-scale", type=float, default=0.8)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--rotation", type=float, default=0.2)
    p.add_argument("--translation", type=float, default=0.7)
    p.add_argument("--gap", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="output path prefix")

    p = sub.add_parser("train", help="train on source/target feature files")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="report file (default: stdout)")
    p.add_argument("--eval-labels", help="target truth, for reporting only")
    _add_config_flags(p)

    p = sub.add_parser("infer", help="predict with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="predictions file")
    p.add_argument("--mixup", type=float, default=0.3)

    p = sub.add_parser("zeroshot", help="cosine-similarity labels from raw features")
    p.add_argument("--features", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score predictions against truth labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True,
                   help="label file (one int per line) or a labeled UMFS file")
    p.add_argument("--classes", type=int, help="class count (required for txt truth)")
    p.add_argument("--out", help="also write the metrics to this file")

    return parser


def _read_label_file(path, class_count=None):
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"UMFS":
        fset = read_features(path)
        if fset.labels is None:
            raise DimensionError(f"{path}: UMFS file carries no labels")
        return fset.labels, fset.class_count
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                labels.append(int(line))
    return np.asarray(labels, dtype=np.int64), class_count


def _write_label_file(path, labels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in labels:
            fh.write(f"{int(v)}\n")


def _read_text_features(path) -> Tensor2:
    fset = read_features(path)
    if fset.count != fset.class_count:
        raise DimensionError(
            f"{path}: text feature file must have one row per class "
            f"(rows {fset.count}, classes {fset.class_count})"
        )
    return fset.features


def _cmd_gen_synth(args) -> int:
    spec = SynthSpec(
        class_count=args.classes, dim=args.dim, per_domain=args.per_domain,
        proto_scale=args.proto_scale, noise=args.noise,
        shift_rotation=args.rotation, shift_translation=args.translation,
        gap=args.gap, seed=args.seed,
    )
    source, target, text, truth = gen_synth(spec)
    paths = {
        "source": f"{args.out}.source.umfs",
        "target": f"{args.out}.target.umfs",
        "text": f"{args.out}.text.umfs",
        "truth": f"{args.out}.truth.txt",
    }
    write_features(source, paths["source"])
    write_features(target, paths["target"])
    write_features(
        FeatureSet.create(text, None, SOURCE, spec.class_count), paths["text"]
    )
    _write_label_file(paths["truth"], truth)
    for key, path in paths.items():
        print(f"{key}={path}")
    print(f"temperature={spec.temperature!r}")
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    source = read_features(args.source)
    target = read_features(args.target)
    text = _read_text_features(args.text)
    truth = None
    if args.eval_labels:
        truth, _ = _read_label_file(args.eval_labels)
    model, debias, report = T.train(source, target, text, cfg, target_truth=truth)
    T.save_checkpoint(args.out, model, debias, cfg)
    text_report = report.to_text()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text_report)
    else:
        sys.stdout.write(text_report)
    print(f"checkpoint={args.out}")
    return 0


def _cmd_infer(args) -> int:
    model, debias, _ = T.load_checkpoint(args.checkpoint)
    feats = read_features(args.features)
    result = T.infer(model, feats, debias, args.mixup)
    _write_label_file(args.out, result.labels)
    print(f"predictions={args.out}")
    return 0


def _cmd_zeroshot(args) -> int:
    feats = read_features(args.features)
    text = _read_text_features(args.text)
    labels = M.zero_shot_features(feats.features.data, text)
    _write_label_file(args.out, labels)
    print(f"predictions={args.out}")
    return 0


def _cmd_eval(args) -> int:
    pred, _ = _read_label_file(args.pred)
    truth, k_from_file = _read_label_file(args.truth, args.classes)
    class_count = k_from_file or args.classes
    if class_count is None:
        raise _UsageError("--classes is required when truth is a plain label file")
    metrics = evaluate(pred, truth, class_count)
    text = metrics_to_text(metrics)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def _thread_cap() -> int:
    raw = os.environ.get("UNIMOS_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise _UsageError(f"UNIMOS_THREADS must be an integer, got {raw!r}") from exc
    if cap < 0:
        raise _UsageError("UNIMOS_THREADS must be non-negative")
    return cap


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "zeroshot": _cmd_zeroshot,
    "eval": _cmd_eval,
}


def cli_main(argv) -> int:
    parser = _build_parser()
    try:
        _thread_cap()
        args = parser.parse_args(list(argv))
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except (UnimosError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
