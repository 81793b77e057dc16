"""Distance kernels shared by clustering, filtering, encoding and evaluation.

Each kernel exists twice: a numba version compiled with ``@njit`` and a
chunked pure-numpy version. The module-level names point at whichever
backend ``semvocab._backend`` selected; ``numba_kernels`` and
``numpy_kernels`` expose both explicitly for tests and benchmarks.

All kernels take C-contiguous float64 arrays and compute squared distances
as a left-to-right sum over coordinates. Ties on the nearest row resolve to
the lowest index in both backends.
"""

from types import SimpleNamespace

import numpy as np

from ._backend import HAVE_NUMBA, USE_NUMBA, njit

# numpy path: cap on the size of the (rows, pool, h) difference tensor
_CHUNK_ELEMS = 1 << 22


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------

@njit
def _nb_nearest_rows(x, pool):
    n, h = x.shape
    m = pool.shape[0]
    idx = np.empty(n, dtype=np.int64)
    best_sq = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = np.inf
        best_j = 0
        for j in range(m):
            s = 0.0
            for d in range(h):
                t = x[i, d] - pool[j, d]
                s += t * t
                if s >= best:
                    break
            if s < best:
                best = s
                best_j = j
        idx[i] = best_j
        best_sq[i] = best
    return idx, best_sq


@njit
def _nb_cluster_sums(x, assign, k):
    n, h = x.shape
    sums = np.zeros((k, h), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        c = assign[i]
        counts[c] += 1
        for d in range(h):
            sums[c, d] += x[i, d]
    return sums, counts


@njit
def _nb_count_within(x, pool, radius):
    n, h = x.shape
    m = pool.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        r = radius[i]
        # early-abort bound; the final decision always uses sqrt(s) <= r
        bound = r * r * (1.0 + 1e-9)
        c = 0
        for j in range(m):
            s = 0.0
            for d in range(h):
                t = x[i, d] - pool[j, d]
                s += t * t
                if s > bound:
                    break
            if s <= bound and np.sqrt(s) <= r:
                c += 1
        out[i] = c
    return out


@njit
def _nb_filter_mask(x, kp, kn, alpha):
    n, h = x.shape
    n_pos = kp.shape[0]
    n_neg = kn.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        best = np.inf
        for j in range(n_neg):
            s = 0.0
            for d in range(h):
                t = x[i, d] - kn[j, d]
                s += t * t
                if s >= best:
                    break
            if s < best:
                best = s
        delta = alpha * np.sqrt(best)
        bound = delta * delta * (1.0 + 1e-9)
        for j in range(n_pos):
            s = 0.0
            for d in range(h):
                t = x[i, d] - kp[j, d]
                s += t * t
                if s > bound:
                    break
            if s <= bound and np.sqrt(s) <= delta:
                keep[i] = True
                break
    return keep


# --------------------------------------------------------------------------
# numpy kernels
# --------------------------------------------------------------------------

def _row_chunks(n, m, h):
    step = max(1, _CHUNK_ELEMS // max(1, m * h))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _sq_block(xs, pool):
    # coordinate-by-coordinate, matching the summation order of the jit kernels
    sq = np.zeros((xs.shape[0], pool.shape[0]), dtype=np.float64)
    for d in range(xs.shape[1]):
        t = xs[:, d, None] - pool[None, :, d]
        sq += t * t
    return sq


def _np_nearest_rows(x, pool):
    n, h = x.shape
    idx = np.empty(n, dtype=np.int64)
    best_sq = np.empty(n, dtype=np.float64)
    for sl in _row_chunks(n, pool.shape[0], h):
        sq = _sq_block(x[sl], pool)
        j = np.argmin(sq, axis=1)
        idx[sl] = j
        best_sq[sl] = sq[np.arange(sq.shape[0]), j]
    return idx, best_sq


def _np_cluster_sums(x, assign, k):
    h = x.shape[1]
    sums = np.zeros((k, h), dtype=np.float64)
    np.add.at(sums, assign, x)
    counts = np.bincount(assign, minlength=k).astype(np.int64)
    return sums, counts


def _np_count_within(x, pool, radius):
    n, h = x.shape
    out = np.zeros(n, dtype=np.int64)
    if pool.shape[0] == 0:
        return out
    for sl in _row_chunks(n, pool.shape[0], h):
        dist = np.sqrt(_sq_block(x[sl], pool))
        out[sl] = np.count_nonzero(dist <= radius[sl, None], axis=1)
    return out


def _np_filter_mask(x, kp, kn, alpha):
    n = x.shape[0]
    if kn.shape[0] == 0:
        delta = np.full(n, np.inf)
    else:
        _, neg_sq = _np_nearest_rows(x, kn)
        delta = alpha * np.sqrt(neg_sq)
    return _np_count_within(x, kp, delta) > 0


numpy_kernels = SimpleNamespace(
    nearest_rows=_np_nearest_rows,
    cluster_sums=_np_cluster_sums,
    count_within=_np_count_within,
    filter_mask=_np_filter_mask,
)

numba_kernels = SimpleNamespace(
    nearest_rows=_nb_nearest_rows,
    cluster_sums=_nb_cluster_sums,
    count_within=_nb_count_within,
    filter_mask=_nb_filter_mask,
) if HAVE_NUMBA else None

_active = numba_kernels if USE_NUMBA else numpy_kernels


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def nearest_rows(x, pool):
    """Index and squared distance of the nearest ``pool`` row for every row of ``x``."""
    x, pool = _f64(x), _f64(pool)
    if pool.shape[0] == 0:
        raise ValueError("nearest_rows: empty pool")
    if x.shape[1] != pool.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {pool.shape[1]}")
    return _active.nearest_rows(x, pool)


def cluster_sums(x, assign, k):
    """Per-cluster coordinate sums (float64) and member counts, in row order."""
    return _active.cluster_sums(_f64(x), np.ascontiguousarray(assign, dtype=np.int64), int(k))


def count_within(x, pool, radius):
    """Number of ``pool`` rows with euclidean distance <= ``radius[i]`` for each row i."""
    x, pool = _f64(x), _f64(pool)
    radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), (x.shape[0],))
    if pool.shape[0] == 0:
        return np.zeros(x.shape[0], dtype=np.int64)
    return _active.count_within(x, pool, np.ascontiguousarray(radius))


def filter_mask(x, kp, kn, alpha):
    """Keep-mask: a row survives iff some ``kp`` row lies within
    ``alpha`` times its distance to the nearest ``kn`` row.

    With an empty ``kn`` the threshold is infinite; with an empty ``kp``
    nothing survives. Callers handle those branches themselves.
    """
    x, kp, kn = _f64(x), _f64(kp), _f64(kn)
    if kp.shape[0] == 0:
        return np.zeros(x.shape[0], dtype=bool)
    if kn.shape[0] == 0:
        return np.ones(x.shape[0], dtype=bool)
    return _active.filter_mask(x, kp, kn, float(alpha))
