"""Value types, seeding and distance primitives shared by every stage."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels

FEATURE_DTYPE = np.float32

_U64 = (1 << 64) - 1


# --------------------------------------------------------------------------
# seeding
# --------------------------------------------------------------------------

def derive_seed(root: int, tag: str, *index: int) -> int:
    """Child seed for one consumer: blake2b of ``root``, a string tag and indices.

    Independent of the order in which consumers ask for their seeds.
    """
    if not 0 <= int(root) <= _U64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {root}")
    key = ":".join([str(int(root)), tag, *(str(int(i)) for i in index)])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _U64))


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------

def _as_vector(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"expected a 1-d feature vector, got shape {a.shape}")
    return a


def euclidean_distance(a, b) -> float:
    a, b = _as_vector(a), _as_vector(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    s = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        s += (x - y) * (x - y)
    return math.sqrt(s)


def nearest(f, pool) -> tuple[int, float]:
    """Index of and distance to the closest element of ``pool`` (lowest index on ties)."""
    f = _as_vector(f)
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim == 1:
        pool = pool.reshape(-1, 1) if f.shape[0] == 1 else pool.reshape(1, -1)
    if pool.shape[0] == 0:
        raise ValueError("nearest: empty pool")
    if pool.shape[1] != f.shape[0]:
        raise ValueError(f"dimension mismatch: {f.shape[0]} vs {pool.shape[1]}")
    idx, sq = kernels.nearest_rows(f[None, :], pool)
    return int(idx[0]), math.sqrt(float(sq[0]))


# --------------------------------------------------------------------------
# dataset model
# --------------------------------------------------------------------------

def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImageFeatures:
    """One image's sampled descriptors, shape ``(l_i, h)`` float32."""

    image_id: str
    features: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 2 or feats.shape[1] < 1:
            raise ValueError(
                f"{self.image_id}: features must have shape (count, h>=1), got {feats.shape}")
        feats = np.array(feats, dtype=FEATURE_DTYPE, order="C", copy=True)
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"{self.image_id}: non-finite feature component")
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "image_id", str(self.image_id))

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def h(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class LabelVocabulary:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(t) for t in self.labels)
        if not labels:
            raise ValueError("label vocabulary needs at least one label")
        if any(not t for t in labels):
            raise ValueError("label names must be non-empty")
        if len(set(labels)) != len(labels):
            raise ValueError("label names must be unique")
        object.__setattr__(self, "labels", labels)

    @property
    def k(self) -> int:
        return len(self.labels)

    def index(self, name: str) -> int:
        return self.labels.index(name)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Image collection with a labeled subset and its boolean label matrix.

    ``label_matrix`` rows follow ``labeled_ids`` order.
    """

    images: tuple[ImageFeatures, ...]
    labeled_ids: tuple[str, ...]
    label_matrix: np.ndarray
    label_vocab: LabelVocabulary
    _pos: dict = field(init=False, repr=False)
    _row: dict = field(init=False, repr=False)

    def __post_init__(self):
        images = tuple(self.images)
        labeled = tuple(str(i) for i in self.labeled_ids)
        pos = {}
        for p, im in enumerate(images):
            if im.image_id in pos:
                raise ValueError(f"duplicate image id {im.image_id!r}")
            pos[im.image_id] = p
        dims = {im.h for im in images}
        if len(dims) > 1:
            raise ValueError(f"images disagree on feature dimension: {sorted(dims)}")
        y = np.array(self.label_matrix, dtype=bool, copy=True)
        if y.ndim != 2:
            y = y.reshape(len(labeled), -1)
        if y.shape != (len(labeled), self.label_vocab.k):
            raise ValueError(
                f"label matrix shape {y.shape} != ({len(labeled)}, {self.label_vocab.k})")
        row = {}
        for r, iid in enumerate(labeled):
            if iid not in pos:
                raise ValueError(f"labeled id {iid!r} is not an image of the dataset")
            if iid in row:
                raise ValueError(f"labeled id {iid!r} listed twice")
            row[iid] = r
        empty = [labeled[r] for r in np.flatnonzero(~y.any(axis=1))]
        if empty:
            raise ValueError(f"labeled images without any label: {empty[:5]}")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labeled_ids", labeled)
        object.__setattr__(self, "label_matrix", _frozen(y))
        object.__setattr__(self, "_pos", pos)
        object.__setattr__(self, "_row", row)

    @property
    def n(self) -> int:
        return len(self.images)

    @property
    def n1(self) -> int:
        return len(self.labeled_ids)

    @property
    def k(self) -> int:
        return self.label_vocab.k

    @property
    def h(self) -> int:
        if not self.images:
            raise ValueError("empty dataset has no feature dimension")
        return self.images[0].h

    @property
    def image_ids(self) -> tuple[str, ...]:
        return tuple(im.image_id for im in self.images)

    def image(self, image_id: str) -> ImageFeatures:
        return self.images[self._pos[image_id]]

    def labeled_images(self) -> list[ImageFeatures]:
        return [self.image(i) for i in self.labeled_ids]

    def label_row(self, image_id: str) -> np.ndarray:
        return self.label_matrix[self._row[image_id]]

    def is_labeled(self, image_id: str) -> bool:
        return image_id in self._row

    def labeled_pool(self) -> np.ndarray:
        """All features of the labeled images, concatenated in ``labeled_ids`` order."""
        return concat_features(self.labeled_images(), self.h)

    def class_indices(self, ids: Iterable[str] | None = None) -> np.ndarray:
        """Single-label class index per image; every listed image must be labeled once."""
        ids = self.labeled_ids if ids is None else tuple(ids)
        out = np.empty(len(ids), dtype=np.int64)
        for p, iid in enumerate(ids):
            if iid not in self._row:
                raise ValueError(f"image {iid!r} has no label")
            cols = np.flatnonzero(self.label_matrix[self._row[iid]])
            if cols.size != 1:
                raise ValueError(
                    f"image {iid!r} carries {cols.size} labels; classification needs exactly one")
            out[p] = cols[0]
        return out

    def restrict(self, image_ids: Sequence[str], labeled_ids: Sequence[str]) -> "LabeledDataset":
        """Sub-dataset keeping ``image_ids`` (in dataset order) and only the listed labels."""
        keep = set(image_ids)
        lab = set(labeled_ids)
        if not lab <= keep:
            raise ValueError("labeled ids must be a subset of the kept images")
        images = tuple(im for im in self.images if im.image_id in keep)
        labeled = tuple(im.image_id for im in images if im.image_id in lab)
        y = np.array([self.label_row(i) for i in labeled], dtype=bool).reshape(len(labeled), self.k)
        return LabeledDataset(images, labeled, y, self.label_vocab)

    def with_features(self, replacement: dict[str, np.ndarray]) -> "LabeledDataset":
        """Copy with the feature sets of some images replaced."""
        images = tuple(
            ImageFeatures(im.image_id, replacement[im.image_id]) if im.image_id in replacement else im
            for im in self.images)
        return LabeledDataset(images, self.labeled_ids, self.label_matrix, self.label_vocab)


def concat_features(images: Sequence[ImageFeatures], h: int) -> np.ndarray:
    if not images:
        return np.empty((0, h), dtype=FEATURE_DTYPE)
    return np.concatenate([im.features for im in images], axis=0)
