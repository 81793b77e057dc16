import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semvocab.core import ImageFeatures
from semvocab.features import (BadMagicError, FeatureFileError, InvalidDimensionError, LabelTableError,
                               RasterImage, SamplingConfig, TruncatedFileError, UnsupportedVersionError,
                               decode_pnm, dense_sample, describe_patch, dumps_features, encode_pgm,
                               extract_image, loads_features, read_feature_file, read_label_table,
                               read_raster, write_feature_file)


def blank(h, w, value=0.5):
    return RasterImage(np.full((h, w), value))


# -- dense sampling -----------------------------------------------------------

def grid_by_hand(h, w, step, patch):
    half = patch // 2
    centers = []
    r = half
    while r + half <= h:
        c = half
        while c + half <= w:
            centers.append((r, c))
            c += step
        r += step
    return centers


def test_dense_sample_64x64():
    centers = dense_sample(blank(64, 64), SamplingConfig(16, 16))
    assert len(centers) == 16
    assert centers == grid_by_hand(64, 64, 16, 16)


def test_dense_sample_32x64():
    centers = dense_sample(blank(32, 64), SamplingConfig(16, 16))
    assert len(centers) == 8
    assert sorted({r for r, _ in centers}) == [8, 24]


def test_dense_sample_too_small_warns():
    warnings = []
    assert dense_sample(blank(10, 40), SamplingConfig(16, 16), warnings) == []
    assert len(warnings) == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(8, 90), st.integers(8, 90), st.integers(1, 20), st.sampled_from([8, 10, 16, 24]))
def test_dense_sample_grid_geometry(h, w, step, patch):
    cfg = SamplingConfig(step, patch, min_image_side=1)
    a = dense_sample(RasterImage(np.random.default_rng(h * w).random((h, w))), cfg)
    b = dense_sample(blank(h, w), cfg)
    assert a == b  # pure geometry
    assert a == (grid_by_hand(h, w, step, patch) if min(h, w) >= patch else [])
    for r, c in a:
        assert r - patch // 2 >= 0 and c - patch // 2 >= 0
        assert r + patch // 2 <= h and c + patch // 2 <= w


def test_sampling_config_validation():
    for bad in [dict(grid_step=0), dict(patch_size=7), dict(patch_size=9), dict(min_image_side=0)]:
        with pytest.raises(ValueError):
            SamplingConfig(**bad)


# -- descriptor ---------------------------------------------------------------

def test_constant_patch_gives_zero_vector():
    v = describe_patch(blank(16, 16, 0.3), (8, 8), 16)
    assert v.shape == (128,)
    assert not v.any()


def test_vertical_step_edge_uses_horizontal_gradient_bins():
    px = np.zeros((16, 16))
    px[:, 8:] = 1.0
    v = describe_patch(RasterImage(px), (8, 8), 16).astype(np.float64)
    per_orient = v.reshape(16, 8).sum(axis=0)
    assert per_orient[[0, 4]].sum() == pytest.approx(per_orient.sum(), rel=1e-6)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-6)


def test_out_of_bounds_patch_raises():
    with pytest.raises(ValueError):
        describe_patch(blank(16, 16), (4, 8), 16)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.45), st.floats(0.1, 1.9))
def test_descriptor_invariances(seed, shift, scale):
    base = np.random.default_rng(seed).random((16, 16)) * 0.5
    v = describe_patch(RasterImage(base), (8, 8), 16)
    assert np.linalg.norm(v.astype(np.float64)) == pytest.approx(1.0, abs=1e-6)
    shifted = describe_patch(RasterImage(base + shift), (8, 8), 16)
    scaled = describe_patch(RasterImage(base * scale), (8, 8), 16)
    assert np.allclose(v, shifted, atol=1e-6)
    assert np.allclose(v, scaled, atol=1e-6)


def test_extract_image_counts_match_grid():
    img = RasterImage(np.random.default_rng(0).random((48, 80)))
    feats = extract_image("x", img, SamplingConfig(8, 16))
    assert feats.count == len(grid_by_hand(48, 80, 8, 16))
    assert feats.h == 128


def test_from_rgb_luma():
    rgb = np.zeros((2, 2, 3))
    rgb[..., 1] = 1.0
    assert np.allclose(RasterImage.from_rgb(rgb).pixels, 0.587)


def test_pnm_decode_pgm_and_ppm(tmp_path):
    img = RasterImage(np.random.default_rng(1).integers(0, 256, (5, 7)) / 255.0)
    data = encode_pgm(img)
    assert np.allclose(decode_pnm(data).pixels, img.pixels)
    ppm = b"P6\n# comment\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255])
    assert np.allclose(decode_pnm(ppm).pixels, [[0.299, 0.114]])
    p16 = b"P5 1 1 65535\n" + struct.pack(">H", 65535)
    assert decode_pnm(p16).pixels[0, 0] == 1.0
    path = tmp_path / "a.pgm"
    path.write_bytes(data)
    assert np.allclose(read_raster(path).pixels, img.pixels)
    with pytest.raises(ValueError):
        decode_pnm(b"P2 1 1 255\n0")
    with pytest.raises(ValueError):
        decode_pnm(b"P5 4 4 255\n" + bytes(3))


# -- feature files ------------------------------------------------------------

def test_feature_file_round_trip(tmp_path):
    img = ImageFeatures("a", np.random.default_rng(2).normal(size=(3, 128)))
    path = tmp_path / "a.boff"
    write_feature_file(img, path)
    back = read_feature_file(path)
    assert back.image_id == "a"
    assert np.array_equal(back.features, img.features)
    write_feature_file(back, tmp_path / "b.boff")
    assert path.read_bytes() == (tmp_path / "b.boff").read_bytes()


def test_feature_file_empty_is_valid():
    img = loads_features(dumps_features(ImageFeatures("e", np.zeros((0, 128)))), "e")
    assert img.count == 0 and img.h == 128


def test_feature_file_layout():
    data = dumps_features(ImageFeatures("a", [[1.0, 2.0]]))
    assert data[:4] == b"BOFF"
    assert struct.unpack_from("<HII", data, 4) == (1, 2, 1)
    assert struct.unpack_from("<2f", data, 14) == (1.0, 2.0)


def test_feature_file_errors_are_distinct():
    good = dumps_features(ImageFeatures("a", np.ones((2, 4))))
    with pytest.raises(BadMagicError):
        loads_features(b"XXXX" + good[4:], "a")
    with pytest.raises(UnsupportedVersionError):
        loads_features(good[:4] + struct.pack("<H", 2) + good[6:], "a")
    with pytest.raises(InvalidDimensionError):
        loads_features(good[:6] + struct.pack("<I", 0) + good[10:], "a")
    with pytest.raises(TruncatedFileError):
        loads_features(good[:-1], "a")
    with pytest.raises(TruncatedFileError):
        loads_features(good[:8], "a")
    with pytest.raises(FeatureFileError):
        loads_features(good + b"\0", "a")


# -- label table --------------------------------------------------------------

def write(tmp_path, text):
    p = tmp_path / "labels.csv"
    p.write_text(text, encoding="utf-8")
    return p


def test_label_table_basic(tmp_path):
    p = write(tmp_path, "image_id,label\np1,a\np2,a\np2,b\np2,b\n")
    vocab, labeled, y = read_label_table(p, ["p1", "p2", "p3"])
    assert vocab.labels == ("a", "b")
    assert labeled == ("p1", "p2")
    assert y.tolist() == [[True, False], [True, True]]


def test_label_table_rows_follow_dataset_order(tmp_path):
    p = write(tmp_path, "# note\nimage_id,label\nq,x\np,y\n")
    vocab, labeled, y = read_label_table(p, ["p", "q"])
    assert vocab.labels == ("x", "y")
    assert labeled == ("p", "q")
    assert y.tolist() == [[False, True], [True, False]]


@pytest.mark.parametrize("text, match", [
    ("", "empty"),
    ("image_id,label\n", "no labeled"),
    ("image_id,label\nzzz,a\n", "zzz"),
    ("image_id,label\np1,\n", "empty label"),
    ("id,lab\np1,a\n", "header"),
])
def test_label_table_errors(tmp_path, text, match):
    with pytest.raises(LabelTableError, match=match):
        read_label_table(write(tmp_path, text), ["p1"])
