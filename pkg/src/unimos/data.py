"""Feature-file container, deterministic PRNG and the synthetic benchmark.

The UMFS container stores feature matrices as little-endian 32-bit floats
(version 1) and checkpoints as named 64-bit blocks (version 2). The PRNG is a
SplitMix64-seeded xoshiro256** implemented on masked Python integers so any
port of this format can reproduce the exact same datasets bit for bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ContractViolation,
    DimensionError,
    LabelRangeError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .ndgrad import Tensor2

MAGIC = b"UMFS"
_FLAG_LABELS = 1
_FLAG_TARGET = 2

SOURCE = "source"
TARGET = "target"


@dataclass
class FeatureSet:
    """An NxD feature matrix with optional labels; the unit of all file I/O.

    Features are snapped to 32-bit float precision on construction so that a
    set written to disk and read back compares equal to the in-memory one.
    """

    features: Tensor2
    labels: np.ndarray | None
    domain: str
    class_count: int

    @classmethod
    def create(cls, features, labels, domain: str, class_count: int) -> "FeatureSet":
        arr = np.asarray(
            features.data if isinstance(features, Tensor2) else features,
            dtype=np.float64,
        )
        snapped = Tensor2(arr.astype(np.float32).astype(np.float64))
        if snapped.rows < 1:
            raise ContractViolation("FeatureSet needs at least one row")
        if domain not in (SOURCE, TARGET):
            raise ContractViolation(f"unknown domain tag {domain!r}")
        if class_count < 1:
            raise ContractViolation("class_count must be positive")
        lab = None
        if labels is not None:
            lab = np.asarray(labels, dtype=np.int32)
            if lab.shape != (snapped.rows,):
                raise DimensionError("labels length must match feature rows")
            if lab.size and (lab.min() < 0 or lab.max() >= class_count):
                raise LabelRangeError(
                    f"label outside [0,{class_count}): {lab.min()}..{lab.max()}"
                )
        return cls(snapped, lab, domain, class_count)

    @property
    def count(self) -> int:
        return self.features.rows

    @property
    def dim(self) -> int:
        return self.features.cols


def write_features(fset: FeatureSet, path) -> None:
    flags = 0
    if fset.labels is not None:
        flags |= _FLAG_LABELS
    if fset.domain == TARGET:
        flags |= _FLAG_TARGET
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HHIII", 1, flags, fset.count, fset.dim, fset.class_count))
        fh.write(fset.features.data.astype("<f4").tobytes())
        if fset.labels is not None:
            fh.write(fset.labels.astype("<i4").tobytes())


def read_features(path) -> FeatureSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a UMFS file")
    if len(raw) < 20:
        raise TruncatedFileError(f"{path}: header incomplete")
    version, flags, n, d, k = struct.unpack("<HHIII", raw[4:20])
    if version != 1:
        raise UnsupportedVersionError(f"{path}: feature container version {version}")
    off = 20
    need = n * d * 4
    if len(raw) < off + need:
        raise TruncatedFileError(f"{path}: feature payload incomplete")
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += need
    labels = None
    if flags & _FLAG_LABELS:
        if len(raw) < off + n * 4:
            raise TruncatedFileError(f"{path}: label payload incomplete")
        labels = np.frombuffer(raw, dtype="<i4", count=n, offset=off).copy()
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise LabelRangeError(f"{path}: stored label outside [0,{k})")
    domain = TARGET if flags & _FLAG_TARGET else SOURCE
    return FeatureSet.create(feats.astype(np.float64), labels, domain, k)


# ---------------------------------------------------------------------------
# version-2 container: named 64-bit blocks (checkpoints)
# ---------------------------------------------------------------------------

def write_blocks(path, blocks: dict[str, np.ndarray], config_hash: int) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HHQI", 2, 0, config_hash & (2**64 - 1), len(blocks)))
        for name, arr in blocks.items():
            arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            if arr.ndim != 2:
                raise DimensionError(f"block {name!r} must be 2-D")
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(arr.astype("<f8").tobytes())


def read_blocks(path) -> tuple[dict[str, np.ndarray], int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a UMFS file")
    if len(raw) < 20:
        raise TruncatedFileError(f"{path}: header incomplete")
    version, _flags, config_hash, count = struct.unpack("<HHQI", raw[4:20])
    if version != 2:
        raise UnsupportedVersionError(f"{path}: block container version {version}")
    off = 20
    blocks: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(raw) < off + 2:
            raise TruncatedFileError(f"{path}: block name incomplete")
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        if len(raw) < off + name_len + 8:
            raise TruncatedFileError(f"{path}: block header incomplete")
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        need = rows * cols * 8
        if len(raw) < off + need:
            raise TruncatedFileError(f"{path}: block payload incomplete")
        blocks[name] = (
            np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off)
            .reshape(rows, cols)
            .copy()
        )
        off += need
    return blocks, config_hash


# ---------------------------------------------------------------------------
# deterministic PRNG
# ---------------------------------------------------------------------------

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** seeded through SplitMix64; identical on every platform."""

    def __init__(self, seed: int):
        state = seed & _MASK
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self._s = s
        self._spare_gaussian: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def next_f64(self) -> float:
        """Uniform in [0,1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_gaussian(self) -> float:
        """Standard normal via Box-Muller on the uniform stream."""
        if self._spare_gaussian is not None:
            z = self._spare_gaussian
            self._spare_gaussian = None
            return z
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # (0,1]
        u2 = self.next_f64()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_gaussian = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_f64()

    def next_below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection."""
        if bound <= 0:
            raise ContractViolation("next_below: bound must be positive")
        limit = (2**64 // bound) * bound
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def gaussian_matrix(self, rows: int, cols: int) -> np.ndarray:
        return np.array(
            [[self.next_gaussian() for _ in range(cols)] for _ in range(rows)]
        )


# ---------------------------------------------------------------------------
# synthetic benchmark generator
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    """Knobs for the synthetic two-domain benchmark.

    Class prototypes are orthonormal directions scaled by ``proto_scale``.
    The target domain sees every prototype rotated in the first two
    coordinates and translated along a fixed direction; text prototypes sit
    at a constant offset of magnitude ``gap`` from the vision prototypes,
    mimicking how text and vision embeddings occupy separated regions.
    """

    class_count: int = 10
    dim: int = 64
    per_domain: int = 500
    proto_scale: float = 0.8
    noise: float = 0.25
    shift_rotation: float = 0.2
    shift_translation: float = 0.7
    gap: float = 1.0
    seed: int = 7
    temperature: float = 0.04  # logit scale of the synthetic "pretrained" scorer

    def validate(self) -> None:
        if self.dim < self.class_count:
            raise DimensionError(
                f"need dim >= class_count, got {self.dim} < {self.class_count}"
            )
        if self.per_domain % self.class_count != 0:
            raise ContractViolation("per_domain must be divisible by class_count")
        for name in ("proto_scale", "noise", "shift_rotation", "shift_translation", "gap"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be non-negative")


def _orthonormal_rows(rng: Rng, k: int, d: int) -> np.ndarray:
    """K orthonormal d-vectors via Gram-Schmidt on Gaussian draws."""
    rows = np.empty((k, d))
    for i in range(k):
        while True:
            v = np.array([rng.next_gaussian() for _ in range(d)])
            for j in range(i):
                v -= (v @ rows[j]) * rows[j]
            norm = np.linalg.norm(v)
            if norm > 1e-6:
                rows[i] = v / norm
                break
    return rows


_GAP_TILT = 6.0  # strength of the in-span component of the text offset


def _givens_rotate(x: np.ndarray, angle: float) -> np.ndarray:
    out = x.copy()
    c, s = math.cos(angle), math.sin(angle)
    out[..., 0] = c * x[..., 0] - s * x[..., 1]
    out[..., 1] = s * x[..., 0] + c * x[..., 1]
    return out


def gen_synth(spec: SynthSpec):
    """Build (source, target, text, target_truth) for one seed.

    The target truth labels are returned separately; the target FeatureSet is
    unlabeled, matching how the trainer consumes it.
    """
    spec.validate()
    rng = Rng(spec.seed)
    k, d, n = spec.class_count, spec.dim, spec.per_domain

    protos = _orthonormal_rows(rng, k, d) * spec.proto_scale
    # The gap direction carries a deliberate in-span component: text prototype
    # norms then vary per class, so zero-shot quality is class-dependent (some
    # classes are text-hard while the vision geometry is untouched), matching
    # how class-name embeddings are unevenly placed relative to image features.
    gap_dir = np.array([rng.next_gaussian() for _ in range(d)])
    gap_dir /= np.linalg.norm(gap_dir)
    tilt = np.array([rng.next_gaussian() for _ in range(k)])
    span = (tilt @ protos) / (np.linalg.norm(protos, axis=1).mean() * np.sqrt(k))
    gap_dir = gap_dir + _GAP_TILT * span / max(np.linalg.norm(span), 1e-12)
    gap_dir /= np.linalg.norm(gap_dir)
    trans_dir = np.array([rng.next_gaussian() for _ in range(d)])
    trans_dir /= np.linalg.norm(trans_dir)

    text = protos + spec.gap * gap_dir[None, :]

    labels = np.arange(n, dtype=np.int32) % k
    src = np.empty((n, d))
    for i in range(n):
        src[i] = protos[labels[i]] + spec.noise * np.array(
            [rng.next_gaussian() for _ in range(d)]
        )
    rotated = _givens_rotate(protos, spec.shift_rotation)
    tgt = np.empty((n, d))
    for i in range(n):
        tgt[i] = (
            rotated[labels[i]]
            + spec.shift_translation * trans_dir
            + spec.noise * np.array([rng.next_gaussian() for _ in range(d)])
        )

    source = FeatureSet.create(src, labels, SOURCE, k)
    target = FeatureSet.create(tgt, None, TARGET, k)
    text_t = Tensor2(text.astype(np.float32).astype(np.float64))
    return source, target, text_t, labels.copy()
