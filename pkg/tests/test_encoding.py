import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semvocab.core import ImageFeatures
from semvocab.encoding import encode_dataset, encode_image, read_encoding_csv, stack, write_encoding_csv
from semvocab.vocabulary import GENERIC, VisualVocabulary

from conftest import make_dataset
from oracles import dist


def vocab_of(words):
    words = np.asarray(words, dtype=np.float64)
    return VisualVocabulary(words, np.full(len(words), GENERIC), "random")


def test_single_word_image():
    v = vocab_of([[0.0], [10.0], [20.0], [30.0]])
    img = ImageFeatures("a", [[29.0], [31.0], [30.0], [40.0]])
    assert encode_image(img, v).weights.tolist() == [0.0, 0.0, 0.0, 1.0]


def test_uniform_split_and_tie_break():
    v = vocab_of([[0.0], [10.0], [20.0]])
    assert encode_image(ImageFeatures("a", [[1.0], [9.0]]), v).weights.tolist() == [0.5, 0.5, 0.0]
    # 5 is equidistant from words 0 and 1
    assert encode_image(ImageFeatures("b", [[5.0]]), v).weights.tolist() == [1.0, 0.0, 0.0]


def test_matches_brute_force_tally():
    rng = np.random.default_rng(5)
    words = rng.normal(size=(9, 4))
    feats = rng.normal(size=(57, 4))
    v = vocab_of(words)
    w32 = v.words.astype(np.float64)
    f32 = ImageFeatures("a", feats).features.astype(np.float64)
    tally = [0] * 9
    for f in f32:
        d = [dist(f, w) for w in w32]
        tally[min(range(9), key=lambda j: (d[j], j))] += 1
    assert np.allclose(encode_image(ImageFeatures("a", feats), v).weights, np.array(tally) / 57, atol=0)


def test_sums_to_one_on_1000_images():
    rng = np.random.default_rng(6)
    v = vocab_of(rng.normal(size=(50, 8)))
    for i in range(1000):
        img = ImageFeatures(str(i), rng.normal(size=(int(rng.integers(1, 200)), 8)))
        w = encode_image(img, v).weights
        assert abs(math.fsum(w) - 1.0) <= 1e-9
        assert np.all(w >= 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(1, 40))
def test_permutation_equivariance(seed, m, n):
    rng = np.random.default_rng(seed)
    words = rng.normal(size=(m, 3))
    img = ImageFeatures("a", rng.normal(size=(n, 3)))
    perm = rng.permutation(m)
    base = encode_image(img, vocab_of(words)).weights
    permuted = encode_image(img, vocab_of(words[perm])).weights
    assert np.array_equal(permuted, base[perm])


def test_empty_image_and_dataset_order():
    ds = make_dataset([[[0.0], [1.0]], np.zeros((0, 1)), [[9.0]]], [{0}, {0}, {0}])
    vecs = encode_dataset(ds, vocab_of([[0.0], [10.0]]))
    assert [v.image_id for v in vecs] == list(ds.image_ids)
    assert all(len(v.weights) == 2 for v in vecs)
    assert vecs[1].empty and not vecs[1].weights.any()
    assert not vecs[0].empty


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        encode_image(ImageFeatures("a", [[1.0, 2.0]]), vocab_of([[0.0]]))


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    v = vocab_of(rng.normal(size=(6, 2)))
    vecs = [encode_image(ImageFeatures(f"i{j}", rng.normal(size=(7, 2))), v) for j in range(4)]
    path = tmp_path / "enc.csv"
    write_encoding_csv(vecs, path, "config_sha256=abc root_seed=3")
    back, meta = read_encoding_csv(path)
    assert meta == {"config_sha256": "abc", "root_seed": "3"}
    assert [b.image_id for b in back] == [f"i{j}" for j in range(4)]
    assert np.allclose(stack(back), stack(vecs), rtol=1e-8)
    assert path.read_text().splitlines()[1] == "image_id,w0,w1,w2,w3,w4,w5"
