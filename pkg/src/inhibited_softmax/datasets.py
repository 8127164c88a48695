"""Synthetic generators, IDX ingestion, preprocessing and splits."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagicError, CountMismatchError, DataError, TruncatedFileError
from .numeric import RngStream, as_matrix

IDX_IMAGES_MAGIC = 0x00000803  # 2051
IDX_LABELS_MAGIC = 0x00000801  # 2049


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.features.shape[0]:
            raise DataError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels outside [0, {self.n_classes})")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass
class XorToyConfig:
    n_samples: int = 500
    noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 4:
            raise ValueError("XOR toy needs at least 4 samples")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be >= 0")


XOR_CENTERS = np.array([[1.0, 1.0], [-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0]])


def gen_xor(cfg: XorToyConfig) -> Dataset:
    """Four Gaussian clusters at (+-1, +-1); label 1 where the signs differ.

    Samples are dealt to the clusters round-robin, so the two classes are
    balanced to within one sample.
    """
    rng = RngStream(cfg.seed, 0)
    which = np.arange(cfg.n_samples) % 4
    pts = XOR_CENTERS[which] + rng.normal(0.0, cfg.noise_sd, size=(cfg.n_samples, 2))
    labels = (which >= 2).astype(np.int64)
    order = rng.permutation(cfg.n_samples)
    return Dataset(pts[order], labels[order], 2)


@dataclass
class BlobOodConfig:
    in_centers: list = field(default_factory=lambda: [[0.0, 0.0], [4.0, 0.0], [2.0, 3.5]])
    ood_shift: float = 10.0
    per_class: int = 200
    sd: float = 1.0
    seed: int = 0
    ood_directions: int = 8

    def __post_init__(self):
        if self.ood_directions < 1:
            raise ValueError("ood_directions must be >= 1")
        if len(self.in_centers) < 2:
            raise ValueError("need at least two in-distribution centers")
        if not self.ood_shift > 0:
            raise ValueError("ood_shift must be positive")


def ood_centers(centers, shift: float, directions: int = 8) -> np.ndarray:
    """OOD cluster centers, each at distance >= ``shift`` from every in-center.

    The centers sit on a circle around the in-distribution centroid with
    radius ``shift`` plus the largest center-to-centroid distance, at
    ``directions`` evenly spaced angles (offset by half a step so none lies
    on an axis).  ``directions=1`` gives a single cluster on the diagonal.
    """
    c = np.asarray(centers, dtype=np.float64)
    centroid = c.mean(axis=0)
    radius = np.max(np.linalg.norm(c - centroid, axis=1))
    if directions == 1 or c.shape[1] != 2:
        if directions != 1:
            raise ValueError("multiple OOD directions need 2-D centers")
        unit = np.ones((1, c.shape[1])) / np.sqrt(c.shape[1])
    else:
        angle = 2.0 * np.pi * (np.arange(directions) + 0.5) / directions
        unit = np.c_[np.cos(angle), np.sin(angle)]
    return centroid + unit * (shift + radius)


def gen_blobs_ood(cfg: BlobOodConfig):
    """Gaussian clusters (one class each) plus unlabeled OOD clusters far away.

    OOD points are dealt round-robin over ``cfg.ood_directions`` clusters,
    ``per_class`` points in total.
    """
    rng = RngStream(cfg.seed, 0)
    centers = np.asarray(cfg.in_centers, dtype=np.float64)
    k, dim = centers.shape
    labels = np.repeat(np.arange(k), cfg.per_class)
    pts = centers[labels] + rng.normal(0.0, cfg.sd, size=(labels.size, dim))
    order = rng.permutation(labels.size)
    in_dist = Dataset(pts[order], labels[order], k)
    far = ood_centers(centers, cfg.ood_shift, cfg.ood_directions)
    which = np.arange(cfg.per_class) % len(far)
    ood_pts = far[which] + rng.normal(0.0, cfg.sd, size=(cfg.per_class, dim))
    ood = Dataset(ood_pts, np.zeros(cfg.per_class, dtype=np.int64), k)
    return in_dist, ood


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"{what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_idx(path, magic: int) -> np.ndarray:
    """Read a big-endian unsigned-byte IDX array with the given magic."""
    with open(path, "rb") as f:
        head = _read_exact(f, 4, os.fspath(path))
        (got,) = struct.unpack(">I", head)
        if got != magic:
            raise BadMagicError(f"{path}: magic {got:#010x}, expected {magic:#010x}")
        ndim = got & 0xFF
        dims = struct.unpack(">" + "I" * ndim, _read_exact(f, 4 * ndim, os.fspath(path)))
        count = int(np.prod(dims))
        data = _read_exact(f, count, os.fspath(path))
    return np.frombuffer(data, dtype=np.uint8).reshape(dims)


def write_idx(path, array) -> None:
    arr = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(">" + "I" * arr.ndim, *arr.shape))
        f.write(arr.tobytes())


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1] and flattened."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(feats, labels, n_classes)


def negate_images(d: Dataset) -> Dataset:
    x = d.features
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise DataError("negate_images expects features in [0, 1]")
    return Dataset(1.0 - x, d.labels.copy(), d.n_classes)


def split(d: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffled partition into ``(train, val, test)``.

    Sizes are ``floor(f * n)`` for the first splits; the last takes the rest.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negatives summing to 1, got {fractions}")
    n = len(d)
    n_train = int(np.floor(fr[0] * n + 1e-9))
    n_val = int(np.floor(fr[1] * n + 1e-9))
    sizes = [n_train, n_val, n - n_train - n_val]
    for f, s in zip(fr, sizes):
        if f > 0 and s == 0:
            raise DataError(f"split of {n} rows with fractions {tuple(fractions)} leaves an empty part")
    perm = RngStream(seed, 0).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return d.subset(perm[:a]), d.subset(perm[a:b]), d.subset(perm[b:])


def holdout_class_ood(d: Dataset, held_classes):
    """Move ``held_classes`` to an unlabeled OOD set; re-index the rest densely."""
    held = sorted({int(c) for c in held_classes})
    if not held:
        raise ValueError("held_classes must be nonempty")
    if any(c < 0 or c >= d.n_classes for c in held):
        raise ValueError("held class outside label range")
    kept = [c for c in range(d.n_classes) if c not in held]
    if not kept:
        raise ValueError("cannot hold out every class")
    remap = np.full(d.n_classes, -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    is_held = np.isin(d.labels, held)
    in_dist = Dataset(d.features[~is_held], remap[d.labels[~is_held]], len(kept))
    n_ood = int(is_held.sum())
    ood = Dataset(d.features[is_held], np.zeros(n_ood, dtype=np.int64), len(kept))
    return in_dist, ood
