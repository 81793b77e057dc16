"""Split protocols, the two classifiers, and IR-style metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .clustering import KMeansParams, kmeans
from .core import LabeledDataset, derive_seed, make_rng

log = logging.getLogger(__name__)

PROTOCOLS = ("holdout_clustering", "class_balanced_svm")


class SplitError(ValueError):
    pass


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    protocol: str = "holdout_clustering"
    learn_fraction: float = 0.67
    labeled_fraction_of_learn: float = 0.5
    per_class_learn: int = 30
    per_class_labeled: int = 15
    repetitions: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        for name in ("learn_fraction", "labeled_fraction_of_learn"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not 1 <= self.per_class_labeled <= self.per_class_learn:
            raise ValueError("need 1 <= per_class_labeled <= per_class_learn")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass(frozen=True)
class Split:
    learn: tuple
    labeled: tuple
    test: tuple


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_split(dataset: LabeledDataset, spec: SplitSpec, repetition_index: int) -> Split:
    """Stratified split; every image of ``dataset`` must carry exactly one label."""
    ids = dataset.image_ids
    return split_classes(ids, dataset.class_indices(ids), dataset.label_vocab.labels,
                         spec, repetition_index)


def split_classes(ids, classes, label_names, spec: SplitSpec, repetition_index: int) -> Split:
    """Stratified split of ``ids`` given one class index per id; output keeps input order."""
    ids = tuple(ids)
    classes = np.asarray(classes, dtype=np.int64)
    learn, labeled = set(), set()
    for c in range(len(label_names)):
        members = np.flatnonzero(classes == c)
        name = label_names[c]
        n = members.size
        if n == 0:
            continue
        if spec.protocol == "holdout_clustering":
            n_learn = _round_half_up(spec.learn_fraction * n)
            n_lab = _round_half_up(spec.labeled_fraction_of_learn * n_learn)
            if n_learn < 1 or n_learn >= n or n_lab < 1:
                raise SplitError(f"class {name!r} has {n} images, too few for a holdout split")
        else:
            n_learn, n_lab = spec.per_class_learn, spec.per_class_labeled
            if n <= n_learn:
                raise SplitError(
                    f"class {name!r} has {n} images; the balanced protocol needs more than {n_learn}")
        rng = make_rng(derive_seed(spec.seed, "split", repetition_index, c))
        perm = members[rng.permutation(n)]
        learn.update(perm[:n_learn].tolist())
        labeled.update(perm[:n_lab].tolist())
    order = range(len(ids))
    return Split(
        tuple(ids[p] for p in order if p in learn),
        tuple(ids[p] for p in order if p in labeled),
        tuple(ids[p] for p in order if p not in learn))


# --------------------------------------------------------------------------
# clustering-based classifier
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClusterModel:
    centroids: np.ndarray
    cluster_labels: np.ndarray


def cluster_classifier_fit(x_learn, labeled_rows, labeled_classes, nc: int, seed: int,
                           n_classes: int | None = None,
                           kmeans_params: KMeansParams | None = None) -> ClusterModel:
    """k-means over all learn vectors; clusters take the majority label of their labeled members.

    Clusters without labeled members get the most frequent labeled class.
    Ties go to the lower class index.
    """
    x = np.asarray(x_learn, dtype=np.float64)
    rows = np.asarray(labeled_rows, dtype=np.int64)
    cls = np.asarray(labeled_classes, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("cluster classifier needs at least one labeled learn vector")
    if rows.shape != cls.shape:
        raise ValueError("labeled_rows and labeled_classes must align")
    n_classes = int(cls.max()) + 1 if n_classes is None else n_classes
    if nc < n_classes:
        log.warning("nc=%d is below the number of classes (%d)", nc, n_classes)
    params = kmeans_params or KMeansParams()
    res = kmeans(x, nc, KMeansParams(params.max_iterations, params.convergence_tol, seed))
    fallback = int(np.argmax(np.bincount(cls, minlength=n_classes)))
    votes = np.zeros((nc, n_classes), dtype=np.int64)
    np.add.at(votes, (res.assignments[rows], cls), 1)
    labels = np.where(votes.sum(axis=1) > 0, np.argmax(votes, axis=1), fallback)
    return ClusterModel(res.centroids, labels.astype(np.int64))


def cluster_classifier_predict(model: ClusterModel, x_test) -> np.ndarray:
    idx, _ = kernels.nearest_rows(np.asarray(x_test, dtype=np.float64), model.centroids)
    return model.cluster_labels[idx]


# --------------------------------------------------------------------------
# linear one-vs-rest hinge classifier
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearParams:
    lam: float = 1e-3
    epochs: int = 400


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray   # (c, d + 1); last column is the bias
    scale: float
    trained: np.ndarray   # classes seen in the learn set; others never win


def _augment(x, scale):
    x = np.asarray(x, dtype=np.float64) / scale
    return np.hstack([x, np.ones((x.shape[0], 1))])


def linear_ovr_fit(x_learn, y_learn, params: LinearParams = LinearParams(),
                   n_classes: int | None = None) -> LinearModel:
    """One L2-regularised hinge classifier per class, full-batch subgradient descent.

    Minimises ``lam/2 |w|^2 + mean_i max(0, 1 - s_i (w . x_i))`` with a
    constant bias feature, step ``1/(lam t)`` (Pegasos schedule), projection
    onto the ``1/sqrt(lam)`` ball and averaging of the second half of the
    iterates. Inputs are divided by the mean training row norm first.
    """
    y = np.asarray(y_learn, dtype=np.int64)
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    present = np.unique(y)
    if present.size < 2:
        raise ValueError("linear classifier needs at least two classes in the learn set")
    x = np.asarray(x_learn, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    scale = float(norms.mean()) if norms.mean() > 0 else 1.0
    xa = _augment(x, scale)
    n, d = xa.shape
    signs = np.where(y[:, None] == np.arange(n_classes)[None, :], 1.0, -1.0)   # (n, c)
    w = np.zeros((n_classes, d))
    avg = np.zeros_like(w)
    n_avg = 0
    radius = 1.0 / math.sqrt(params.lam)
    start_avg = params.epochs // 2
    for t in range(1, params.epochs + 1):
        margins = signs * (xa @ w.T)
        active = (margins < 1.0) * signs                       # (n, c)
        grad = params.lam * w - (active.T @ xa) / n
        w = w - grad / (params.lam * t)
        norm = np.linalg.norm(w, axis=1, keepdims=True)
        w = w * np.minimum(1.0, radius / np.maximum(norm, 1e-300))
        if t > start_avg:
            avg += w
            n_avg += 1
    trained = np.zeros(n_classes, dtype=bool)
    trained[present] = True
    return LinearModel(avg / n_avg, scale, trained)


def linear_ovr_decision(model: LinearModel, x) -> np.ndarray:
    scores = _augment(x, model.scale) @ model.weights.T
    scores[:, ~model.trained] = -np.inf
    return scores


def linear_ovr_predict(model: LinearModel, x) -> np.ndarray:
    return np.argmax(linear_ovr_decision(model, x), axis=1)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


@dataclass(frozen=True, eq=False)
class MetricsReport:
    labels: tuple
    confusion: np.ndarray     # rows = true class, cols = predicted class
    precision: np.ndarray
    recall: np.ndarray
    f_measure: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    present: np.ndarray       # classes with at least one true instance

    def _macro(self, values) -> float:
        return float(values[self.present].mean()) if self.present.any() else 0.0

    @property
    def macro_precision(self) -> float:
        return self._macro(self.precision)

    @property
    def macro_recall(self) -> float:
        return self._macro(self.recall)

    @property
    def macro_f(self) -> float:
        return self._macro(self.f_measure)

    @property
    def macro_tpr(self) -> float:
        return self._macro(self.tpr)

    @property
    def macro_fpr(self) -> float:
        return self._macro(self.fpr)

    def macro(self) -> dict:
        return {"macro_precision": self.macro_precision, "macro_recall": self.macro_recall,
                "macro_f": self.macro_f, "macro_tpr": self.macro_tpr, "macro_fpr": self.macro_fpr}


def compute_metrics(true_labels, predicted_labels, label_vocab) -> MetricsReport:
    labels = tuple(getattr(label_vocab, "labels", label_vocab))
    k = len(labels)
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("true and predicted labels differ in length")
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (t, p), 1)
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    tn = conf.sum() - tp - fp - fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f = _ratio(2.0 * precision * recall, precision + recall)
    fpr = _ratio(fp, fp + tn)
    return MetricsReport(labels, conf, precision, recall, f, recall.copy(), fpr,
                         conf.sum(axis=1) > 0)


def aggregate_over_nc(values) -> float:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("nothing to aggregate")
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class RocPoint:
    vocab_size: int
    fpr: float
    tpr: float
    smallest: bool


def roc_points(reports_by_size) -> list[RocPoint]:
    """One (macro FPR, macro TPR) point per vocabulary size, ordered by size.

    ``reports_by_size`` maps size to a MetricsReport or to a ``(fpr, tpr)`` pair.
    """
    items = sorted(dict(reports_by_size).items())
    out = []
    for pos, (size, rep) in enumerate(items):
        fpr, tpr = (rep.macro_fpr, rep.macro_tpr) if isinstance(rep, MetricsReport) else rep
        out.append(RocPoint(int(size), float(fpr), float(tpr), pos == 0))
    return out


@dataclass(frozen=True)
class EvalConfig:
    nc_values: tuple = tuple(range(10, 101, 10))
    clustering_repeats: int = 25
    construction_repeats: int = 3
    linear: LinearParams = field(default_factory=LinearParams)

    def __post_init__(self):
        nc = tuple(int(v) for v in self.nc_values)
        if not nc:
            raise ValueError("nc_values must not be empty")
        if any(b <= a for a, b in zip(nc, nc[1:])):
            raise ValueError("nc_values must be strictly ascending")
        if nc[0] < 1:
            raise ValueError("nc values must be >= 1")
        object.__setattr__(self, "nc_values", nc)
        if self.clustering_repeats < 1 or self.construction_repeats < 1:
            raise ValueError("repeat counts must be >= 1")
