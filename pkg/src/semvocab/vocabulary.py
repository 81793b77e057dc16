"""Visual vocabulary construction: random, random+km, dedicated and filtered dedicated.

Vocabulary file layout (little-endian)::

    b"BOFV" | u16 version=1 | u8 strategy | u32 m | u32 h | u32 k
    then per word: i32 provenance (-1 = generic) | h float32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import KMeansParams, ameliorate_using_kmeans, choose_features_at_random
from .core import FEATURE_DTYPE, LabeledDataset, concat_features, derive_seed

GENERIC = -1
STRATEGIES = ("random", "random_km", "model", "filt_model")
_STRATEGY_CODE = {s: i for i, s in enumerate(STRATEGIES)}
_ALIASES = {"random+km": "random_km", "filt+model": "filt_model"}

VOCAB_MAGIC = b"BOFV"
VOCAB_VERSION = 1
_HEADER = struct.Struct("<4sHBIII")


class VocabularyError(ValueError):
    pass


def canonical_strategy(name: str) -> str:
    name = _ALIASES.get(name.strip(), name.strip())
    if name not in _STRATEGY_CODE:
        raise VocabularyError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
    return name


@dataclass(frozen=True, eq=False)
class VisualVocabulary:
    words: np.ndarray          # (m, h) float32
    provenance: np.ndarray     # (m,) int32 label index or GENERIC
    strategy_tag: str
    k: int = 0

    def __post_init__(self):
        words = np.array(self.words, dtype=FEATURE_DTYPE, order="C", copy=True)
        prov = np.array(self.provenance, dtype=np.int32, copy=True)
        if words.ndim != 2 or words.shape[0] == 0:
            raise VocabularyError(f"vocabulary needs shape (m>=1, h), got {words.shape}")
        if prov.shape != (words.shape[0],):
            raise VocabularyError("one provenance entry per word required")
        words.setflags(write=False)
        prov.setflags(write=False)
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "provenance", prov)
        object.__setattr__(self, "strategy_tag", canonical_strategy(self.strategy_tag))

    @property
    def m(self) -> int:
        return self.words.shape[0]

    @property
    def h(self) -> int:
        return self.words.shape[1]


def split_sizes(m: int, k: int) -> list[int]:
    """Per-label word counts: ``m // k`` each, the remainder going to the first labels."""
    if k < 1:
        raise VocabularyError("need at least one label")
    if m < k:
        raise VocabularyError(f"vocabulary size {m} smaller than label count {k}")
    q, r = divmod(m, k)
    return [q + 1 if i < r else q for i in range(k)]


def label_pool(dataset: LabeledDataset, label: int) -> np.ndarray:
    """Features of every labeled image carrying ``label``, in labeled order."""
    rows = np.flatnonzero(dataset.label_matrix[:, label])
    return concat_features([dataset.image(dataset.labeled_ids[r]) for r in rows], dataset.h)


def _init_seed(seed: int, slot: int) -> int:
    # slot 0 is shared by the generic pool and the first label, so a
    # single-label dedicated build reproduces random+km exactly
    return derive_seed(seed, "vocab-init", slot)


def build_random(m: int, dataset: LabeledDataset, seed: int) -> VisualVocabulary:
    pool = dataset.labeled_pool()
    if pool.shape[0] < m:
        raise VocabularyError(
            f"labeled images hold {pool.shape[0]} features, fewer than the {m} words requested")
    words = choose_features_at_random(m, pool, _init_seed(seed, 0))
    return VisualVocabulary(words, np.full(m, GENERIC), "random", dataset.k)


def build_random_km(m: int, dataset: LabeledDataset, params: KMeansParams) -> VisualVocabulary:
    init = build_random(m, dataset, params.seed)
    res = ameliorate_using_kmeans(init.words, dataset.labeled_pool(), params)
    return VisualVocabulary(res.centroids, np.full(m, GENERIC), "random_km", dataset.k)


def build_dedicated(m: int, dataset: LabeledDataset, params: KMeansParams,
                    strategy_tag: str = "model") -> VisualVocabulary:
    """One k-means vocabulary per label over that label's features, concatenated in label order."""
    sizes = split_sizes(m, dataset.k)
    pools = [label_pool(dataset, i) for i in range(dataset.k)]
    for i, (size, pool) in enumerate(zip(sizes, pools)):
        if pool.shape[0] < size:
            raise VocabularyError(
                f"label {dataset.label_vocab.labels[i]!r} has {pool.shape[0]} features, "
                f"needs at least {size} for its dedicated vocabulary")
    words, prov = [], []
    for i, (size, pool) in enumerate(zip(sizes, pools)):
        init = choose_features_at_random(size, pool, _init_seed(params.seed, i))
        res = ameliorate_using_kmeans(init, pool, params)
        words.append(res.centroids)
        prov.append(np.full(size, i))
    return VisualVocabulary(np.concatenate(words), np.concatenate(prov), strategy_tag, dataset.k)


def build_filtered_dedicated(m: int, dataset: LabeledDataset, filter_params,
                             params: KMeansParams, report: list | None = None) -> VisualVocabulary:
    from .filtering import filter_dataset

    filtered, rows = filter_dataset(dataset, filter_params)
    if report is not None:
        report.extend(rows)
    try:
        return build_dedicated(m, filtered, params, strategy_tag="filt_model")
    except VocabularyError as exc:
        raise VocabularyError(
            f"{exc} after filtering; try a larger alpha or a smaller vocabulary") from exc


def build_vocabulary(strategy: str, m: int, dataset: LabeledDataset, params: KMeansParams,
                     filter_params=None, report: list | None = None) -> VisualVocabulary:
    strategy = canonical_strategy(strategy)
    if strategy == "random":
        return build_random(m, dataset, params.seed)
    if strategy == "random_km":
        return build_random_km(m, dataset, params)
    if strategy == "model":
        return build_dedicated(m, dataset, params)
    if filter_params is None:
        raise VocabularyError("filt_model needs filter parameters")
    return build_filtered_dedicated(m, dataset, filter_params, params, report)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def dumps_vocabulary(vocab: VisualVocabulary) -> bytes:
    rec = np.dtype([("prov", "<i4"), ("w", "<f4", (vocab.h,))])
    body = np.empty(vocab.m, dtype=rec)
    body["prov"] = vocab.provenance
    body["w"] = vocab.words
    head = _HEADER.pack(VOCAB_MAGIC, VOCAB_VERSION, _STRATEGY_CODE[vocab.strategy_tag],
                        vocab.m, vocab.h, vocab.k)
    return head + body.tobytes()


def loads_vocabulary(data: bytes) -> VisualVocabulary:
    if data[:4] != VOCAB_MAGIC:
        raise VocabularyError(f"bad magic {data[:4]!r}, expected {VOCAB_MAGIC!r}")
    if len(data) < _HEADER.size:
        raise VocabularyError("truncated vocabulary header")
    _, version, code, m, h, k = _HEADER.unpack_from(data)
    if version != VOCAB_VERSION:
        raise VocabularyError(f"unsupported vocabulary version {version}")
    if code >= len(STRATEGIES):
        raise VocabularyError(f"unknown strategy code {code}")
    if m == 0 or h == 0:
        raise VocabularyError(f"invalid vocabulary shape m={m} h={h}")
    rec = np.dtype([("prov", "<i4"), ("w", "<f4", (h,))])
    need = _HEADER.size + rec.itemsize * m
    if len(data) != need:
        raise VocabularyError(f"vocabulary payload is {len(data)} bytes, expected {need}")
    body = np.frombuffer(data, dtype=rec, count=m, offset=_HEADER.size)
    return VisualVocabulary(body["w"], body["prov"], STRATEGIES[code], k)


def write_vocabulary(vocab: VisualVocabulary, path) -> None:
    Path(path).write_bytes(dumps_vocabulary(vocab))


def read_vocabulary(path) -> VisualVocabulary:
    return loads_vocabulary(Path(path).read_bytes())
