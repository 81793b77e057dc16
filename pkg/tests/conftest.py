import numpy as np
import pytest

from semvocab.core import ImageFeatures, LabeledDataset, LabelVocabulary


def _as_rows(f):
    a = np.asarray(f, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def make_dataset(features, label_sets, k=None, unlabeled=()):
    """Dataset from per-image feature arrays and label-index sets (labeled images first)."""
    k = k if k is not None else 1 + max((max(s) for s in label_sets if s), default=0)
    images = [ImageFeatures(f"im{i:03d}", _as_rows(f)) for i, f in enumerate(features)]
    extra = [ImageFeatures(f"un{i:03d}", _as_rows(f)) for i, f in enumerate(unlabeled)]
    y = np.zeros((len(label_sets), k), dtype=bool)
    for r, s in enumerate(label_sets):
        y[r, list(s)] = True
    vocab = LabelVocabulary(tuple(f"t{j}" for j in range(k)))
    return LabeledDataset(tuple(images + extra), tuple(im.image_id for im in images[:len(label_sets)]),
                          y, vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record(criterion, passed, detail):
    line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
