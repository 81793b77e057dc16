"""Exact Lloyd k-means used by every vocabulary strategy and the cluster classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

from . import kernels
from .core import make_rng

# relative slack when checking that the objective never increases
_MONOTONE_RTOL = 1e-9


class ObjectiveIncreaseError(RuntimeError):
    pass


@dataclass(frozen=True)
class KMeansParams:
    max_iterations: int = 100
    # total centroid movement threshold; None means 1e-4 * h
    convergence_tol: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_tol is not None and self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")

    def tol_for(self, h: int) -> float:
        return 1e-4 * h if self.convergence_tol is None else float(self.convergence_tol)


@dataclass(eq=False)
class KMeansResult:
    centroids: np.ndarray          # (k, h) float64
    assignments: np.ndarray        # (n,) int64
    objective: float
    iterations_run: int
    objective_history: list = field(default_factory=list)
    repaired: int = 0


def choose_features_at_random(m: int, pool, seed: int) -> np.ndarray:
    """``m`` rows of ``pool`` drawn uniformly without replacement."""
    return np.asarray(pool)[choose_indices_at_random(m, len(pool), seed)]


def choose_indices_at_random(m: int, n: int, seed: int) -> np.ndarray:
    if m < 1:
        raise ValueError(f"need at least one feature, asked for {m}")
    if m > n:
        raise ValueError(f"cannot draw {m} distinct features from a pool of {n}")
    return make_rng(seed).choice(n, size=m, replace=False)


def _repair_empty(x, assign, sq, counts, centroids):
    """Move each empty centroid onto the point farthest from its own centroid."""
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return 0
    # farthest first, lowest index among equals
    order = np.lexsort((np.arange(sq.shape[0]), -sq))
    taken = 0
    for c in empty:
        while taken < order.size and counts[assign[order[taken]]] <= 1:
            taken += 1
        if taken == order.size:
            break
        p = order[taken]
        taken += 1
        counts[assign[p]] -= 1
        assign[p] = c
        counts[c] = 1
        sq[p] = 0.0
        centroids[c] = x[p]
    return int(empty.size)


def ameliorate_using_kmeans(initial, pool, params: KMeansParams) -> KMeansResult:
    """Refine ``initial`` centroids by Lloyd iterations over ``pool``.

    Each iteration assigns every point to its nearest centroid (lowest index
    on ties), re-seeds empty clusters, then recomputes means in float64.
    Stops when the summed centroid movement is <= tol or after
    ``max_iterations`` updates.
    """
    x = np.ascontiguousarray(pool, dtype=np.float64)
    centroids = np.array(initial, dtype=np.float64, copy=True)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("k-means needs a non-empty 2-d pool")
    if centroids.ndim != 2 or centroids.shape[0] == 0:
        raise ValueError("k-means needs at least one initial centroid")
    if centroids.shape[1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: centroids {centroids.shape[1]} vs pool {x.shape[1]}")
    k = centroids.shape[0]
    tol = params.tol_for(x.shape[1])

    history: list[float] = []
    repaired = 0
    it = 0
    assign = np.zeros(x.shape[0], dtype=np.int64)
    while it < params.max_iterations:
        it += 1
        assign, sq = kernels.nearest_rows(x, centroids)
        counts = np.bincount(assign, minlength=k)
        repaired += _repair_empty(x, assign, sq, counts, centroids)
        # exactly rounded, so the trace does not depend on reduction order
        obj = math.fsum(sq.tolist())
        if history and obj > history[-1] * (1.0 + _MONOTONE_RTOL) + 1e-300:
            raise ObjectiveIncreaseError(
                f"k-means objective rose from {history[-1]!r} to {obj!r} at iteration {it}")
        history.append(obj)
        sums, counts = kernels.cluster_sums(x, assign, k)
        new = centroids.copy()
        live = counts > 0
        new[live] = sums[live] / counts[live, None]
        moved = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).sum())
        centroids = new
        if moved <= tol:
            break

    diff = x - centroids[assign]
    objective = float(np.einsum("ij,ij->", diff, diff))
    return KMeansResult(centroids, assign, objective, it, history, repaired)


def kmeans(pool, k: int, params: KMeansParams) -> KMeansResult:
    """Random-init k-means: ``k`` pool points drawn with ``params.seed`` then refined."""
    x = np.asarray(pool, dtype=np.float64)
    init = choose_features_at_random(k, x, params.seed)
    return ameliorate_using_kmeans(init, x, params)
