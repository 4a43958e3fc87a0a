"""Datasets over the unit box: ingestion, synthesis, splits, and augmentation.

Every example lives in [0,1]^d as float64; labels are integers in [0, C).
Datasets are immutable after construction and safe to share for reads.  Two
binary layouts are supported: RAW8 (headerless byte records, one label byte
then d pixel bytes) and F32 (a "SATD" header followed by typed records).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

_F32_MAGIC = b"SATD"


class Dataset:
    """A fixed collection of examples in [0,1]^d with integer labels."""

    __slots__ = ("examples", "labels", "num_classes", "dim", "provenance")

    def __init__(self, examples, labels, num_classes, provenance="memory"):
        x = np.array(examples, dtype=np.float64)
        y = np.array(labels, dtype=np.int64)
        if x.ndim != 2:
            raise DataError(f"examples must be a 2-d array, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DataError(
                f"labels must be one per example, got {y.shape} for {x.shape[0]} rows"
            )
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise DataError("examples must lie in [0,1]")
        num_classes = int(num_classes)
        if num_classes < 0:
            raise DataError("num_classes must be non-negative")
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise DataError(
                f"labels must lie in [0, {num_classes}), got range "
                f"[{y.min()}, {y.max()}]"
            )
        x.setflags(write=False)
        y.setflags(write=False)
        self.examples = x
        self.labels = y
        self.num_classes = num_classes
        self.dim = x.shape[1] if x.ndim == 2 else 0
        self.provenance = provenance

    def __len__(self):
        return self.examples.shape[0]

    def __repr__(self):
        return (
            f"Dataset(n={len(self)}, dim={self.dim}, "
            f"num_classes={self.num_classes}, provenance={self.provenance!r})"
        )

    def subset(self, indices, provenance=None):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.examples[idx],
            self.labels[idx],
            self.num_classes,
            provenance or self.provenance,
        )


@dataclass(frozen=True)
class AugmentationPolicy:
    """Stochastic view generator: uniform jitter, coordinate masking, mirroring.

    ``jitter`` is the amplitude of additive uniform noise, ``mask_prob`` the
    per-coordinate zeroing probability, and ``flip`` enables reversing the
    coordinate order on half of the draws.  Outputs are clipped to [0,1].
    """

    jitter: float = 0.05
    mask_prob: float = 0.0
    flip: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.jitter < 0:
            raise ConfigError(f"jitter must be non-negative, got {self.jitter}")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError(f"mask_prob must lie in [0,1], got {self.mask_prob}")


def augment(x, policy, draw):
    """One stochastic view of ``x`` under ``policy``, deterministic in ``draw``."""
    rng = draw if isinstance(draw, np.random.Generator) else np.random.default_rng(draw)
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    if policy.flip and rng.random() < 0.5:
        out = out[..., ::-1]
    if policy.jitter > 0:
        out = out + rng.uniform(-policy.jitter, policy.jitter, size=out.shape)
    if policy.mask_prob > 0:
        keep = rng.random(size=out.shape) >= policy.mask_prob
        out = out * keep
    return np.clip(out, 0.0, 1.0)


def gen_synthetic(seed, num_classes, dim, n_per_class, spread, means=None):
    """Gaussian class blobs clipped to the unit box, deterministic in ``seed``.

    Class means are drawn once from ``seed``, uniformly inside [0.25, 0.75]^d
    so that typical examples keep away from the box walls; pass ``means``
    (a C-by-d array) to place them explicitly.
    """
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if dim < 2:
        raise ConfigError(f"need dimension of at least 2, got {dim}")
    if spread <= 0:
        raise ConfigError(f"spread must be positive, got {spread}")
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be positive, got {n_per_class}")
    rng = np.random.default_rng(seed)
    if means is None:
        means = rng.uniform(0.25, 0.75, size=(num_classes, dim))
    else:
        means = np.asarray(means, dtype=np.float64)
        if means.shape != (num_classes, dim):
            raise ConfigError(
                f"means must have shape {(num_classes, dim)}, got {means.shape}"
            )
    xs = []
    ys = []
    for c in range(num_classes):
        pts = means[c] + rng.normal(0.0, spread, size=(n_per_class, dim))
        xs.append(np.clip(pts, 0.0, 1.0))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    return Dataset(
        np.concatenate(xs),
        np.concatenate(ys),
        num_classes,
        provenance=f"synthetic(seed={seed})",
    )


def split(dataset, fractions, seed):
    """Label-stratified partition into len(fractions) disjoint datasets."""
    fractions = tuple(float(f) for f in fractions)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    if any(f < 0 for f in fractions):
        raise ConfigError(f"fractions must be non-negative, got {fractions}")
    n_parts = len(fractions)
    rng = np.random.default_rng(seed)
    part_indices = [[] for _ in range(n_parts)]
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size and members.size < sum(1 for f in fractions if f > 0):
            raise DataError(
                f"class {c} has {members.size} examples, fewer than the "
                f"number of non-empty split parts"
            )
        members = rng.permutation(members)
        counts = np.floor(np.array(fractions) * members.size).astype(int)
        # hand leftovers to the largest fractions, deterministically
        short = members.size - counts.sum()
        order = np.argsort([-f for f in fractions], kind="stable")
        for j in range(short):
            counts[order[j % n_parts]] += 1
        stops = np.cumsum(counts)
        starts = np.concatenate([[0], stops[:-1]])
        for p in range(n_parts):
            part_indices[p].append(members[starts[p] : stops[p]])
    out = []
    for p in range(n_parts):
        idx = np.sort(np.concatenate(part_indices[p])) if part_indices[p] else []
        out.append(dataset.subset(idx, provenance=f"{dataset.provenance}/part{p}"))
    return tuple(out)


def load_raw8(path, dim, num_classes=None):
    """Read headerless byte records of [1 label byte][dim pixel bytes]."""
    if dim < 1:
        raise ConfigError(f"dim must be positive, got {dim}")
    with open(path, "rb") as fh:
        raw = fh.read()
    record = 1 + dim
    if len(raw) % record != 0:
        raise DataError(
            f"truncated file {path}: {len(raw)} bytes is not a multiple of "
            f"record size {record} (stray data at byte offset "
            f"{len(raw) - len(raw) % record})"
        )
    n = len(raw) // record
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(n, record) if n else np.zeros(
        (0, record), dtype=np.uint8
    )
    labels = buf[:, 0].astype(np.int64)
    pixels = buf[:, 1:].astype(np.float64) / 255.0
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 0
    elif n and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise DataError(
            f"label {labels[bad]} at record {bad} is outside [0, {num_classes})"
        )
    return Dataset(pixels, labels, num_classes, provenance=str(path))


def save_raw8(dataset, path):
    """Write RAW8 records; pixel values are rounded to the nearest byte."""
    if dataset.num_classes > 256:
        raise DataError("RAW8 stores labels in one byte; num_classes must be <= 256")
    pixels = np.rint(dataset.examples * 255.0).astype(np.uint8)
    labels = dataset.labels.astype(np.uint8).reshape(-1, 1)
    with open(path, "wb") as fh:
        fh.write(np.concatenate([labels, pixels], axis=1).tobytes())


def load_f32(path):
    """Read the typed F32 layout: SATD magic, (n, d, C) header, typed records."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != _F32_MAGIC:
        raise DataError(f"{path} is not an F32 dataset (bad magic)")
    n, d, c = struct.unpack("<III", raw[4:16])
    record = 4 + 4 * d
    body = raw[16:]
    if len(body) != n * record:
        raise DataError(
            f"truncated file {path}: expected {n * record} record bytes, "
            f"got {len(body)} (at byte offset {16 + len(body)})"
        )
    if n:
        rows = np.frombuffer(body, dtype=np.uint8).reshape(n, record)
        labels = rows[:, :4].copy().view("<u4").reshape(n).astype(np.int64)
        pixels = rows[:, 4:].copy().view("<f4").reshape(n, d).astype(np.float64)
    else:
        labels = np.zeros(0, dtype=np.int64)
        pixels = np.zeros((0, d), dtype=np.float64)
    if n and labels.max() >= c:
        raise DataError(f"label {labels.max()} is outside [0, {c})")
    return Dataset(pixels, labels, c, provenance=str(path))


def save_f32(dataset, path):
    """Write the F32 layout; pixel values are quantized to 32-bit floats."""
    n, d = dataset.examples.shape
    with open(path, "wb") as fh:
        fh.write(_F32_MAGIC)
        fh.write(struct.pack("<III", n, d, dataset.num_classes))
        if n:
            rows = np.empty((n, 4 + 4 * d), dtype=np.uint8)
            rows[:, :4] = (
                dataset.labels.astype("<u4").view(np.uint8).reshape(n, 4)
            )
            rows[:, 4:] = (
                dataset.examples.astype("<f4").view(np.uint8).reshape(n, 4 * d)
            )
            fh.write(rows.tobytes())
