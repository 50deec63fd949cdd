"""Synthetic four-texture segmentation data and a fixed texture feature bank.

Every image is cut into four rectangles at a random split point; each
rectangle carries one class texture (horizontal stripes, vertical stripes,
fine checkerboard, flat bright), so all four classes appear in every image.
Some images get a black unlabeled band, mimicking missing satellite
coverage.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .augment import Record
from .model import CLASSES
from .rle import rle_encode, rle_text

TEXTURE_OF = {"Fish": "hstripes", "Flower": "vstripes", "Gravel": "checker", "Sugar": "flat"}


def _texture(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    phase = rng.uniform(0, 2 * np.pi)
    period = rng.uniform(5, 7)
    if kind == "hstripes":
        g = 0.5 + 0.4 * np.sin(2 * np.pi * yy / period + phase)
    elif kind == "vstripes":
        g = 0.5 + 0.4 * np.sin(2 * np.pi * xx / period + phase)
    elif kind == "checker":
        g = 0.15 + 0.7 * (((yy // 2) + (xx // 2)) % 2)
    else:
        g = np.full((h, w), rng.uniform(0.7, 0.9))
    return g


def make_image(rng: np.random.Generator, size: int = 64, band_prob: float = 0.3):
    """One (size, size, 3) uint8 image and its (4, size, size) boolean masks."""
    h = w = size
    sy = int(rng.integers(size * 5 // 16, size * 11 // 16 + 1))
    sx = int(rng.integers(size * 5 // 16, size * 11 // 16 + 1))
    order = rng.permutation(len(CLASSES))
    boxes = [(slice(0, sy), slice(0, sx)), (slice(0, sy), slice(sx, w)),
             (slice(sy, h), slice(0, sx)), (slice(sy, h), slice(sx, w))]
    gray = np.zeros((h, w))
    masks = np.zeros((len(CLASSES), h, w), dtype=bool)
    for box, ci in zip(boxes, order):
        tex = _texture(TEXTURE_OF[CLASSES[ci]], h, w, rng)
        gray[box] = tex[box]
        masks[ci][box] = True
    gray += rng.normal(0, 0.04, (h, w))
    if rng.random() < band_prob:
        hi = max(1, size // 6)
        bw = int(rng.integers(min(4, hi), hi + 1))
        x0 = int(rng.integers(0, w - bw + 1))
        gray[:, x0:x0 + bw] = 0
        masks[:, :, x0:x0 + bw] = False
    tint = rng.uniform(0.85, 1.0, 3)
    rgb = np.clip(gray[:, :, None] * tint[None, None, :], 0, 1)
    return np.round(rgb * 255).astype(np.uint8), masks


def synthetic_dataset(n: int = 200, size: int = 64, seed: int = 0) -> list[Record]:
    """``n`` records with CHW uint8 images, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        img, masks = make_image(rng, size)
        out.append(Record(f"synth{i:04d}.png", img.transpose(2, 0, 1).copy(), masks))
    return out


def texture_features(images: np.ndarray, window: int = 7) -> np.ndarray:
    """(n, 3, h, w) images in [0, 1] -> (n, 5, h, w) local texture statistics.

    Channels: local mean intensity and local mean absolute horizontal,
    vertical, diagonal and Laplacian responses, each box-filtered.
    """
    images = np.asarray(images, dtype=np.float64)
    g = images.mean(axis=1)
    dx = np.abs(np.diff(g, axis=2, append=g[:, :, -1:]))
    dy = np.abs(np.diff(g, axis=1, append=g[:, -1:, :]))
    gp = np.pad(g, ((0, 0), (1, 1), (1, 1)), mode="edge")
    diag = np.abs(gp[:, 2:, 2:] - gp[:, 1:-1, 1:-1])
    lap = np.abs(4 * g - gp[:, :-2, 1:-1] - gp[:, 2:, 1:-1] - gp[:, 1:-1, :-2] - gp[:, 1:-1, 2:])
    size = (1, window, window)
    feats = [uniform_filter(f, size=size, mode="nearest") for f in (g, dx, dy, diag, lap)]
    return np.stack(feats, axis=1) * 4.0


def write_dataset(directory, records, csv_name: str = "train.csv") -> Path:
    """Write ``train_images/<name>`` PNGs and a competition-style CSV."""
    from PIL import Image

    from .dataset import SubmissionRecord, write_annotations

    directory = Path(directory)
    img_dir = directory / "train_images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in records:
        Image.fromarray(np.asarray(rec.image).transpose(1, 2, 0)).save(img_dir / rec.name)
        for cls, m in zip(CLASSES, rec.masks):
            rows.append(SubmissionRecord(f"{rec.name}_{cls}", rle_text(rle_encode(m))))
    write_annotations(rows, directory / csv_name)
    return directory
