"""Writer for the UMFS version-1 feature container.

Byte layout, little-endian: magic "UMFS", u16 version=1, u16 flags
(bit0 labels present, bit1 target domain), u32 N, u32 d, u32 K, N*d float32
values row-major, then N int32 labels when flagged.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"UMFS"
FLAG_LABELS = 1
FLAG_TARGET = 2


def write_umfs(path, features: np.ndarray, class_count: int,
               labels=None, target: bool = False) -> None:
    feats = np.ascontiguousarray(np.asarray(features, dtype=np.float32))
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("features must be a non-empty N x d matrix")
    if class_count < 1:
        raise ValueError("class_count must be positive")
    flags = 0
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int32)
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must hold one entry per feature row")
        if labels.size and (labels.min() < 0 or labels.max() >= class_count):
            raise ValueError("label outside [0, class_count)")
        flags |= FLAG_LABELS
    if target:
        flags |= FLAG_TARGET
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HHIII", 1, flags,
                             feats.shape[0], feats.shape[1], class_count))
        fh.write(feats.astype("<f4").tobytes())
        if labels is not None:
            fh.write(labels.astype("<i4").tobytes())
