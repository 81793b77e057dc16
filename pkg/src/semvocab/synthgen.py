"""Seeded Gaussian-mixture feature datasets with object/background ground truth.

Each label owns ``words_per_label`` object centers (optionally label-specific
variants of shared part prototypes); a set of background centers is shared
by all images. An image of label t draws
``(1 - background_fraction) * features_per_image`` features around t's
centers and the rest around background centers. Every image also gets its
own random offset (``image_jitter``) added to all of its object features, so
instances of one label are not drawn from identical clusters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import FEATURE_DTYPE, ImageFeatures, LabeledDataset, LabelVocabulary, derive_seed, make_rng

BACKGROUND = -1


@dataclass(frozen=True)
class SynthConfig:
    k: int = 5
    images_per_label: int = 40
    features_per_image: int = 200
    background_fraction: float = 0.6
    words_per_label: int = 4
    background_centers: int = 20
    h: int = 16
    center_spread: float = 1.0
    within_cluster: float = 0.55
    seed: int = 0
    labeled_fraction: float = 1.0
    # probability that an image also carries a second label (multi-label mode)
    extra_label_prob: float = 0.0
    # when set, the j-th object center of every label is the same shared part
    # prototype plus a label-specific N(0, part_offset^2) displacement
    part_offset: float | None = 0.35
    # when set, each image draws its background from this many randomly
    # chosen background centers instead of from all of them
    background_per_image: int | None = None
    # per-image displacement of every object center (intra-class appearance change)
    image_jitter: float = 0.5

    def __post_init__(self):
        counts = ("k", "images_per_label", "features_per_image", "words_per_label",
                  "background_centers", "h")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ValueError("background_fraction must lie in [0, 1)")
        if not 0.0 < self.within_cluster < self.center_spread:
            raise ValueError("need 0 < within_cluster < center_spread")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError("labeled_fraction must lie in (0, 1]")
        if not 0.0 <= self.extra_label_prob <= 1.0:
            raise ValueError("extra_label_prob must lie in [0, 1]")
        if self.extra_label_prob > 0 and self.k < 2:
            raise ValueError("multi-label generation needs k >= 2")
        if self.part_offset is not None and not self.part_offset > 0:
            raise ValueError("part_offset must be positive when given")
        if self.image_jitter < 0:
            raise ValueError("image_jitter must be >= 0")
        if self.background_per_image is not None and not (
                1 <= self.background_per_image <= self.background_centers):
            raise ValueError("background_per_image must lie in [1, background_centers]")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per image: owning label of every feature, ``BACKGROUND`` for background."""

    owner: dict
    object_centers: np.ndarray      # (k, g, h)
    background_centers: np.ndarray  # (B, h)

    def is_object(self, image_id: str) -> np.ndarray:
        return self.owner[image_id] != BACKGROUND


def generate(cfg: SynthConfig) -> tuple[LabeledDataset, GroundTruth]:
    rng = make_rng(derive_seed(cfg.seed, "synth"))
    if cfg.part_offset is None:
        obj_centers = rng.normal(0.0, cfg.center_spread, size=(cfg.k, cfg.words_per_label, cfg.h))
    else:
        parts = rng.normal(0.0, cfg.center_spread, size=(1, cfg.words_per_label, cfg.h))
        obj_centers = parts + rng.normal(0.0, cfg.part_offset, size=(cfg.k, cfg.words_per_label, cfg.h))
    bg_centers = rng.normal(0.0, cfg.center_spread, size=(cfg.background_centers, cfg.h))
    n_obj = int(round((1.0 - cfg.background_fraction) * cfg.features_per_image))
    n_bg = cfg.features_per_image - n_obj

    images, owners, rows = [], {}, []
    width = max(5, len(str(cfg.k * cfg.images_per_label)))
    for t in range(cfg.k):
        for j in range(cfg.images_per_label):
            iid = f"img{t * cfg.images_per_label + j:0{width}d}"
            labels = [t]
            if cfg.extra_label_prob > 0 and rng.random() < cfg.extra_label_prob:
                other = int(rng.integers(cfg.k - 1))
                labels.append(other + (other >= t))
            owner = np.concatenate([
                np.array(labels)[np.arange(n_obj) % len(labels)],
                np.full(n_bg, BACKGROUND)]).astype(np.int64)
            pts = np.empty((cfg.features_per_image, cfg.h))
            obj = owner != BACKGROUND
            which = rng.integers(cfg.words_per_label, size=n_obj)
            centers = obj_centers
            if cfg.image_jitter > 0:
                centers = obj_centers + rng.normal(0.0, cfg.image_jitter, size=obj_centers.shape)
            pts[obj] = centers[owner[obj], which]
            if cfg.background_per_image is None:
                scene = np.arange(cfg.background_centers)
            else:
                scene = rng.choice(cfg.background_centers, size=cfg.background_per_image, replace=False)
            pts[~obj] = bg_centers[scene[rng.integers(scene.size, size=n_bg)]]
            pts += rng.normal(0.0, cfg.within_cluster, size=pts.shape)
            perm = rng.permutation(cfg.features_per_image)
            images.append(ImageFeatures(iid, pts[perm].astype(FEATURE_DTYPE)))
            owners[iid] = owner[perm]
            row = np.zeros(cfg.k, dtype=bool)
            row[labels] = True
            rows.append(row)

    labeled_mask = np.ones(len(images), dtype=bool)
    if cfg.labeled_fraction < 1.0:
        labeled_mask[:] = False
        for t in range(cfg.k):
            block = np.arange(t * cfg.images_per_label, (t + 1) * cfg.images_per_label)
            n_lab = max(1, int(round(cfg.labeled_fraction * block.size)))
            labeled_mask[rng.choice(block, size=n_lab, replace=False)] = True
    labeled = tuple(im.image_id for im, keep in zip(images, labeled_mask) if keep)
    y = np.array([r for r, keep in zip(rows, labeled_mask) if keep], dtype=bool)
    vocab = LabelVocabulary(tuple(f"label{t}" for t in range(cfg.k)))
    ds = LabeledDataset(tuple(images), labeled, y, vocab)
    return ds, GroundTruth(owners, obj_centers, bg_centers)


def write_ground_truth(gt: GroundTruth, dataset: LabeledDataset, path,
                       header_comment: str | None = None) -> None:
    names = dataset.label_vocab.labels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "feature_index", "flag", "owner_label"])
        for im in dataset.images:
            for idx, o in enumerate(gt.owner[im.image_id]):
                if o == BACKGROUND:
                    w.writerow([im.image_id, idx, "background", ""])
                else:
                    w.writerow([im.image_id, idx, "object", names[o]])
