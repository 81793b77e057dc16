"""Removal of features unlikely to belong to the labeled objects.

For a labeled image p, the known-positive images are the other labeled
images whose label set contains all of p's labels, and the known-negative
images are those sharing none of p's labels. A feature f of p survives iff
some known-positive feature lies within ``alpha * d(f, nearest known-negative)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import LabeledDataset, concat_features, derive_seed, make_rng, nearest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterParams:
    alpha: float = 1.0
    max_files: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.max_files < 1:
            raise ValueError(f"max_files must be >= 1, got {self.max_files}")


@dataclass(frozen=True, eq=False)
class KnownSets:
    kp_image_ids: tuple
    kn_image_ids: tuple
    kp_features: np.ndarray
    kn_features: np.ndarray


@dataclass(frozen=True)
class FilterReportRow:
    image_id: str
    total_features: int
    kept_features: int
    kp_size: int
    kn_size: int


def known_candidates(y: np.ndarray, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of known-positive and known-negative candidates for row ``i`` of ``y``.

    Row ``i`` itself is never a known positive.
    """
    y = np.asarray(y, dtype=bool)
    own = y[i]
    kp = np.all(y[:, own], axis=1)
    kp[i] = False
    kn = ~np.any(y[:, own], axis=1)
    kn[i] = False
    return np.flatnonzero(kp), np.flatnonzero(kn)


def _cap(rows: np.ndarray, max_files: int, seed: int) -> np.ndarray:
    if rows.size <= max_files:
        return rows
    picked = make_rng(seed).choice(rows.size, size=max_files, replace=False)
    return rows[np.sort(picked)]


def create_kp(i: int, dataset: LabeledDataset, params: FilterParams) -> list[str]:
    kp, _ = known_candidates(dataset.label_matrix, i)
    kp = _cap(kp, params.max_files, derive_seed(params.seed, "filter-kp", i))
    return [dataset.labeled_ids[r] for r in kp]


def create_kn(i: int, dataset: LabeledDataset, params: FilterParams) -> list[str]:
    _, kn = known_candidates(dataset.label_matrix, i)
    kn = _cap(kn, params.max_files, derive_seed(params.seed, "filter-kn", i))
    return [dataset.labeled_ids[r] for r in kn]


def known_sets(i: int, dataset: LabeledDataset, params: FilterParams) -> KnownSets:
    kp_ids, kn_ids = create_kp(i, dataset, params), create_kn(i, dataset, params)
    return KnownSets(
        tuple(kp_ids), tuple(kn_ids),
        concat_features([dataset.image(j) for j in kp_ids], dataset.h),
        concat_features([dataset.image(j) for j in kn_ids], dataset.h))


def min_distance(f, pool) -> float:
    if len(pool) == 0:
        raise ValueError("min_distance: empty pool")
    return nearest(f, pool)[1]


def count_similar(f, kp_features, delta: float) -> int:
    f = np.asarray(f, dtype=np.float64).reshape(1, -1)
    return int(kernels.count_within(f, np.asarray(kp_features).reshape(-1, f.shape[1]), delta)[0])


def _filter_one(i: int, dataset: LabeledDataset, params: FilterParams, warnings: list | None):
    iid = dataset.labeled_ids[i]
    feats = dataset.image(iid).features
    ks = known_sets(i, dataset, params)
    if ks.kn_features.shape[0] == 0:
        keep = np.ones(feats.shape[0], dtype=bool)
    elif ks.kp_features.shape[0] == 0:
        msg = f"image {iid!r}: empty known-positive set, keeping all {feats.shape[0]} features"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        keep = np.ones(feats.shape[0], dtype=bool)
    else:
        keep = kernels.filter_mask(feats, ks.kp_features, ks.kn_features, params.alpha)
    row = FilterReportRow(iid, int(feats.shape[0]), int(keep.sum()),
                          len(ks.kp_image_ids), len(ks.kn_image_ids))
    return feats[keep], keep, row


def filter_image(i: int, dataset: LabeledDataset, params: FilterParams,
                 warnings: list | None = None) -> np.ndarray:
    """Surviving features of the ``i``-th labeled image (in original order)."""
    return _filter_one(i, dataset, params, warnings)[0]


def filter_mask_for_image(i: int, dataset: LabeledDataset, params: FilterParams) -> np.ndarray:
    return _filter_one(i, dataset, params, None)[1]


def filter_dataset(dataset: LabeledDataset, params: FilterParams, warnings: list | None = None):
    """Filter every labeled image against the original feature sets.

    Returns the filtered dataset and one report row per labeled image.
    Unlabeled images are untouched.
    """
    replaced, report = {}, []
    for i in range(dataset.n1):
        kept, _, row = _filter_one(i, dataset, params, warnings)
        replaced[row.image_id] = kept
        report.append(row)
    return dataset.with_features(replaced), report


def write_filter_report(rows, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "total_features", "kept_features", "kp_size", "kn_size"])
        for r in rows:
            w.writerow([r.image_id, r.total_features, r.kept_features, r.kp_size, r.kn_size])

