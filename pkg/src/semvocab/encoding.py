"""Quantisation of image features against a vocabulary into tf histograms."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ImageFeatures, LabeledDataset
from .vocabulary import VisualVocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BoFVector:
    image_id: str
    weights: np.ndarray

    @property
    def empty(self) -> bool:
        return not self.weights.any()


def encode_image(img: ImageFeatures, vocab: VisualVocabulary) -> BoFVector:
    """Relative frequency of each word among the image's nearest-word assignments."""
    if vocab.m == 0:
        raise ValueError("cannot encode against an empty vocabulary")
    if img.h != vocab.h:
        raise ValueError(f"dimension mismatch: image {img.image_id!r} h={img.h}, vocabulary h={vocab.h}")
    if img.count == 0:
        log.warning("image %r has no features; encoded as the zero vector", img.image_id)
        return BoFVector(img.image_id, np.zeros(vocab.m))
    idx, _ = kernels.nearest_rows(img.features, vocab.words)
    weights = np.bincount(idx, minlength=vocab.m) / float(img.count)
    return BoFVector(img.image_id, weights)


def encode_dataset(dataset: LabeledDataset, vocab: VisualVocabulary) -> list[BoFVector]:
    return [encode_image(im, vocab) for im in dataset.images]


def stack(vectors) -> np.ndarray:
    return np.vstack([v.weights for v in vectors]) if vectors else np.empty((0, 0))


def write_encoding_csv(vectors, path, header_comment: str | None = None) -> None:
    m = len(vectors[0].weights) if vectors else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id"] + [f"w{j}" for j in range(m)])
        for v in vectors:
            w.writerow([v.image_id] + [format(float(x), ".9g") for x in v.weights])


def read_encoding_csv(path) -> tuple[list[BoFVector], dict[str, str]]:
    """Vectors plus ``key=value`` pairs found in leading ``#`` comment lines."""
    meta: dict[str, str] = {}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        key, val = tok.split("=", 1)
                        meta[key] = val
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader, None)
    if not header or header[0] != "image_id":
        raise ValueError(f"{path}: expected header starting with image_id")
    for row in reader:
        if row:
            rows.append(BoFVector(row[0], np.array([float(x) for x in row[1:]])))
    return rows, meta
