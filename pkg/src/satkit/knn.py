"""Frozen feature libraries with exact k-nearest-neighbor classification.

The library is the encoded training set; classification is a brute-force
scan over all rows, which keeps the search exact and lets tests compare
against independent oracles.  Ties are always resolved deterministically:
equal distances prefer the lower row index, tied votes prefer the class
with the smaller mean neighbor distance, then the lower class id.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, DataError, GroupError, ModelError

_LIBRARY_MAGIC = b"SATL"
_FINGERPRINT_BYTES = 32


class FeatureLibrary:
    """Immutable matrix of training representations with labels."""

    __slots__ = ("representations", "labels", "fingerprint")

    def __init__(self, representations, labels, fingerprint=b""):
        reps = np.array(representations, dtype=np.float64)
        labs = np.array(labels, dtype=np.int64)
        if reps.ndim != 2:
            raise DataError(f"representations must be 2-d, got shape {reps.shape}")
        if labs.shape != (reps.shape[0],):
            raise DataError(
                f"need one label per representation row, got {labs.shape} "
                f"for {reps.shape[0]} rows"
            )
        reps.setflags(write=False)
        labs.setflags(write=False)
        self.representations = reps
        self.labels = labs
        self.fingerprint = bytes(fingerprint)

    def __len__(self):
        return self.representations.shape[0]

    @property
    def rep_dim(self):
        return self.representations.shape[1]

    def check_model(self, model):
        """Raise unless ``model`` is the one whose features fill this library."""
        if self.fingerprint and self.fingerprint != model.fingerprint():
            raise ModelError(
                "feature library was built from a different model "
                "(fingerprint mismatch)"
            )


def build_library(model, dataset):
    """Encode every example of ``dataset`` under ``model`` into a library.

    Rows are encoded one at a time so that row i is bit-identical to an
    independent single-example encoding (batched BLAS calls round
    differently depending on batch size).
    """
    if len(dataset) == 0:
        raise DataError("cannot build a feature library from an empty dataset")
    rows = [model.encode_np(dataset.examples[i : i + 1])[0] for i in range(len(dataset))]
    return FeatureLibrary(np.stack(rows), dataset.labels, model.fingerprint())


def _distances(library, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (library.rep_dim,):
        raise ConfigError(
            f"query must have shape ({library.rep_dim},), got {z.shape}"
        )
    diff = library.representations - z
    return np.sqrt(np.sum(diff * diff, axis=1))


def knn_predict(library, z, k):
    """Majority label among the k nearest library rows.

    Returns (label, neighbor_indices) with neighbors ordered by distance,
    equal distances by lower index.
    """
    n = len(library)
    if not 1 <= k <= n:
        raise ConfigError(f"k must lie in [1, {n}], got {k}")
    dist = _distances(library, z)
    order = np.lexsort((np.arange(n), dist))
    neighbors = order[:k]
    votes = library.labels[neighbors]
    classes, counts = np.unique(votes, return_counts=True)
    top = counts.max()
    tied = classes[counts == top]
    if tied.size == 1:
        return int(tied[0]), neighbors
    means = np.array([dist[neighbors[votes == c]].mean() for c in tied])
    best = tied[means == means.min()]
    return int(best.min()), neighbors


def nearest_group(library, z, m, true_label):
    """Indices of the m nearest library rows of the nearest other class.

    The target class is the one, among classes other than ``true_label``
    holding at least m rows, whose single nearest row is closest to z.
    Returned indices ascend by distance.
    """
    if m < 1:
        raise ConfigError(f"group size must be positive, got {m}")
    dist = _distances(library, z)
    classes = np.unique(library.labels)
    best_class = None
    best_nearest = np.inf
    for c in classes:
        if c == true_label:
            continue
        mask = library.labels == c
        if mask.sum() < m:
            continue
        nearest = dist[mask].min()
        if nearest < best_nearest:
            best_nearest = nearest
            best_class = int(c)
    if best_class is None:
        raise GroupError(
            f"no class other than {true_label} holds at least {m} examples"
        )
    members = np.flatnonzero(library.labels == best_class)
    order = np.lexsort((members, dist[members]))
    return members[order[:m]]


def save_library(library, path):
    """Write the library to its typed binary layout."""
    n, rep_dim = library.representations.shape
    fp = library.fingerprint or bytes(_FINGERPRINT_BYTES)
    if len(fp) != _FINGERPRINT_BYTES:
        raise ModelError(
            f"fingerprint must be {_FINGERPRINT_BYTES} bytes, got {len(fp)}"
        )
    with open(path, "wb") as fh:
        fh.write(_LIBRARY_MAGIC)
        fh.write(struct.pack("<II", n, rep_dim))
        fh.write(fp)
        fh.write(library.labels.astype("<u4").tobytes())
        fh.write(np.ascontiguousarray(library.representations, dtype="<f8").tobytes())


def load_library(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    header = 4 + 8 + _FINGERPRINT_BYTES
    if len(raw) < header or raw[:4] != _LIBRARY_MAGIC:
        raise ModelError(f"{path} is not a feature library file (bad magic)")
    n, rep_dim = struct.unpack("<II", raw[4:12])
    fp = raw[12:header]
    body = raw[header:]
    expect = 4 * n + 8 * n * rep_dim
    if len(body) != expect:
        raise ModelError(
            f"truncated library file {path}: expected {expect} body bytes, "
            f"got {len(body)}"
        )
    labels = np.frombuffer(body[: 4 * n], dtype="<u4").astype(np.int64)
    reps = np.frombuffer(body[4 * n :], dtype="<f8").reshape(n, rep_dim)
    return FeatureLibrary(reps, labels, fp)
