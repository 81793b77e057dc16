"""Dense grid sampling, a SIFT-like patch descriptor, and interchange files.

Binary feature file layout (little-endian)::

    b"BOFF" | u16 version=1 | u32 h | u32 count | count*h float32 (feature-major)

Label table: UTF-8 CSV with header ``image_id,label``, one row per pair.
"""

from __future__ import annotations

import csv
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FEATURE_DTYPE, ImageFeatures, LabeledDataset, LabelVocabulary

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"BOFF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sHII")

N_CELLS = 4
N_ORIENT = 8
CLAMP = 0.2
LUMA = (0.299, 0.587, 0.114)


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class UnsupportedVersionError(FeatureFileError):
    pass


class InvalidDimensionError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class LabelTableError(ValueError):
    pass


# --------------------------------------------------------------------------
# rasters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingConfig:
    grid_step: int = 16
    patch_size: int = 16
    min_image_side: int = 16

    def __post_init__(self):
        if self.grid_step < 1:
            raise ValueError("grid_step must be >= 1")
        if self.patch_size < 8 or self.patch_size % 2:
            raise ValueError("patch_size must be an even number >= 8")
        if self.min_image_side < 1:
            raise ValueError("min_image_side must be >= 1")


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Grayscale image, intensities in [0, 1], stored as a (height, width) array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"raster must be a non-empty 2-d array, got shape {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("raster intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_rgb(cls, rgb) -> "RasterImage":
        rgb = np.asarray(rgb, dtype=np.float64)
        return cls(np.clip(rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2], 0.0, 1.0))


def _pnm_tokens(data: bytes, count: int):
    """First ``count`` header tokens of a binary PNM plus the payload offset."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates header from raster
    return tokens, pos + 1


def decode_pnm(data: bytes) -> RasterImage:
    """Decode a binary PGM (P5) or PPM (P6), 8- or 16-bit."""
    (magic, w, h, maxval), off = _pnm_tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported PNM type {magic!r}; expected P5 or P6")
    w, h, maxval = int(w), int(h), int(maxval)
    if w < 1 or h < 1 or not 1 <= maxval <= 65535:
        raise ValueError(f"invalid PNM geometry {w}x{h} maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * channels * dtype.itemsize
    raw = data[off:off + need]
    if len(raw) < need:
        raise ValueError(f"truncated PNM raster: {len(raw)} of {need} bytes")
    px = np.frombuffer(raw, dtype=dtype).astype(np.float64) / maxval
    px = np.clip(px, 0.0, 1.0)
    if channels == 1:
        return RasterImage(px.reshape(h, w))
    return RasterImage.from_rgb(px.reshape(h, w, 3))


def encode_pgm(img: RasterImage) -> bytes:
    body = np.round(img.pixels * 255.0).astype(np.uint8).tobytes()
    return b"P5\n%d %d\n255\n" % (img.width, img.height) + body


RASTER_SUFFIXES = (".pgm", ".ppm", ".pnm")


def read_raster(path) -> RasterImage:
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        return decode_pnm(data)
    try:
        from PIL import Image
    except ImportError as exc:
        raise ValueError(f"{path}: not a binary PNM and Pillow is unavailable") from exc
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return RasterImage.from_rgb(arr)


# --------------------------------------------------------------------------
# sampling + description
# --------------------------------------------------------------------------

def dense_sample(img: RasterImage, cfg: SamplingConfig, warnings: list | None = None):
    """Patch centers ``(row, col)`` on a regular grid keeping every patch inside the image."""
    half = cfg.patch_size // 2
    if min(img.width, img.height) < max(cfg.min_image_side, cfg.patch_size):
        msg = (f"image {img.width}x{img.height} smaller than "
               f"{max(cfg.min_image_side, cfg.patch_size)} px; no features sampled")
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return []
    rows = range(half, img.height - half + 1, cfg.grid_step)
    cols = range(half, img.width - half + 1, cfg.grid_step)
    return [(r, c) for r in rows for c in cols]


def describe_patch(img: RasterImage, center, patch_size: int) -> np.ndarray:
    """128-d gradient-orientation histogram (4x4 cells x 8 orientations).

    Orientation votes are split linearly between the two nearest bins and
    weighted by gradient magnitude. Non-zero outputs are L2-normalised,
    clamped at 0.2 and renormalised.
    """
    r, c = center
    half = patch_size // 2
    r0, c0 = r - half, c - half
    if patch_size % N_CELLS or r0 < 0 or c0 < 0 or r0 + patch_size > img.height or c0 + patch_size > img.width:
        raise ValueError(
            f"patch of size {patch_size} at {center} falls outside {img.width}x{img.height} image")
    patch = img.pixels[r0:r0 + patch_size, c0:c0 + patch_size]
    gy, gx = np.gradient(patch)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    pos = theta / (2.0 * np.pi / N_ORIENT)
    lo = np.floor(pos).astype(np.int64) % N_ORIENT
    w_hi = pos - np.floor(pos)
    hi = (lo + 1) % N_ORIENT

    cell = patch_size // N_CELLS
    cell_id = (np.arange(patch_size) // cell)
    cell_index = (cell_id[:, None] * N_CELLS + cell_id[None, :]).ravel()
    hist = np.zeros((N_CELLS * N_CELLS, N_ORIENT), dtype=np.float64)
    np.add.at(hist, (cell_index, lo.ravel()), (mag * (1.0 - w_hi)).ravel())
    np.add.at(hist, (cell_index, hi.ravel()), (mag * w_hi).ravel())
    vec = hist.ravel()

    norm = np.linalg.norm(vec)
    if norm == 0.0:
        return np.zeros(N_CELLS * N_CELLS * N_ORIENT, dtype=FEATURE_DTYPE)
    vec = np.minimum(vec / norm, CLAMP)
    vec /= np.linalg.norm(vec)
    return vec.astype(FEATURE_DTYPE)


def extract_image(image_id: str, img: RasterImage, cfg: SamplingConfig,
                  warnings: list | None = None) -> ImageFeatures:
    centers = dense_sample(img, cfg, warnings)
    feats = np.array([describe_patch(img, c, cfg.patch_size) for c in centers],
                     dtype=FEATURE_DTYPE).reshape(len(centers), N_CELLS * N_CELLS * N_ORIENT)
    return ImageFeatures(image_id, feats)


# --------------------------------------------------------------------------
# feature files
# --------------------------------------------------------------------------

def dumps_features(img: ImageFeatures) -> bytes:
    feats = np.ascontiguousarray(img.features, dtype="<f4")
    return _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, img.h, img.count) + feats.tobytes()


def loads_features(data: bytes, image_id: str) -> ImageFeatures:
    if len(data) < 4 or data[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"{image_id}: bad magic {data[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{image_id}: truncated header ({len(data)} bytes)")
    _, version, h, count = _HEADER.unpack_from(data)
    if version != FEATURE_VERSION:
        raise UnsupportedVersionError(f"{image_id}: unsupported format version {version}")
    if h == 0:
        raise InvalidDimensionError(f"{image_id}: feature dimension 0")
    need = _HEADER.size + 4 * h * count
    if len(data) < need:
        raise TruncatedFileError(
            f"{image_id}: truncated payload, {len(data) - _HEADER.size} of {need - _HEADER.size} bytes")
    if len(data) > need:
        raise FeatureFileError(f"{image_id}: {len(data) - need} trailing bytes after payload")
    feats = np.frombuffer(data, dtype="<f4", count=h * count, offset=_HEADER.size)
    return ImageFeatures(image_id, feats.reshape(count, h).astype(FEATURE_DTYPE))


def write_feature_file(img: ImageFeatures, path) -> None:
    Path(path).write_bytes(dumps_features(img))


def read_feature_file(path, image_id: str | None = None) -> ImageFeatures:
    path = Path(path)
    return loads_features(path.read_bytes(), image_id or path.stem)


# --------------------------------------------------------------------------
# label table
# --------------------------------------------------------------------------

def read_label_table(path, image_ids: Sequence[str]):
    """Parse an ``image_id,label`` CSV against the known ``image_ids``.

    Returns ``(LabelVocabulary, labeled_ids, Y)``. Labels are numbered in
    order of first appearance; labeled ids and the rows of ``Y`` follow the
    order of ``image_ids``.
    """
    known = {iid: p for p, iid in enumerate(image_ids)}
    labels: list[str] = []
    label_pos: dict[str, int] = {}
    pairs: dict[str, set[int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader, None)
        if header is None:
            raise LabelTableError(f"{path}: empty label table")
        if [h.strip() for h in header] != ["image_id", "label"]:
            raise LabelTableError(f"{path}: expected header 'image_id,label', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise LabelTableError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            iid, label = row[0].strip(), row[1].strip()
            if iid not in known:
                raise LabelTableError(f"{path}:{lineno}: unknown image id {iid!r}")
            if not label:
                raise LabelTableError(f"{path}:{lineno}: image {iid!r} listed with an empty label")
            if label not in label_pos:
                label_pos[label] = len(labels)
                labels.append(label)
            pairs.setdefault(iid, set()).add(label_pos[label])
    if not pairs:
        raise LabelTableError(f"{path}: no labeled images")
    labeled = sorted(pairs, key=known.__getitem__)
    y = np.zeros((len(labeled), len(labels)), dtype=bool)
    for r, iid in enumerate(labeled):
        y[r, sorted(pairs[iid])] = True
    return LabelVocabulary(tuple(labels)), tuple(labeled), y


def write_label_table(dataset: LabeledDataset, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "label"])
        for iid in dataset.labeled_ids:
            for col in np.flatnonzero(dataset.label_row(iid)):
                w.writerow([iid, dataset.label_vocab.labels[col]])


# --------------------------------------------------------------------------
# dataset directories: <dir>/features/<id>.boff + <dir>/labels.csv
# --------------------------------------------------------------------------

FEATURE_SUFFIX = ".boff"


def save_dataset(dataset: LabeledDataset, directory, header_comment: str | None = None) -> None:
    directory = Path(directory)
    fdir = directory / "features"
    fdir.mkdir(parents=True, exist_ok=True)
    for im in dataset.images:
        write_feature_file(im, fdir / f"{im.image_id}{FEATURE_SUFFIX}")
    write_label_table(dataset, directory / "labels.csv", header_comment)


def load_features_dir(features_dir) -> list[ImageFeatures]:
    fdir = Path(features_dir)
    files = sorted(p for p in fdir.iterdir() if p.suffix == FEATURE_SUFFIX)
    if not files:
        raise FileNotFoundError(f"no {FEATURE_SUFFIX} files in {fdir}")
    return [read_feature_file(p) for p in files]


def load_dataset(features_dir, labels_path) -> LabeledDataset:
    images = load_features_dir(features_dir)
    vocab, labeled, y = read_label_table(labels_path, [im.image_id for im in images])
    return LabeledDataset(tuple(images), labeled, y, vocab)


def list_rasters(images_dir) -> list[Path]:
    d = Path(images_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir()
                  if p.is_file() and not p.name.startswith(".") and p.suffix.lower() in
                  RASTER_SUFFIXES + (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"))


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p


