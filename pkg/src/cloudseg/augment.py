"""Joint image/mask augmentation: flips, rotation up to +-20 degrees, grid distortion.

All transforms act on the last two (spatial) axes, so an image may be
(c, h, w) or (n, c, h, w) and a mask set is (k, h, w). Images are sampled
bilinearly and masks nearest-neighbour; pixels that map outside the
source become 0 (black) in the image and False in the masks.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError

MAX_ROTATION = 20.0
KINDS = ("hflip", "vflip", "rotate", "grid_distort")


@dataclass(frozen=True)
class GridDistortParams:
    """Per-axis multipliers for the widths of ``cells`` equal grid steps."""

    x_steps: tuple[float, ...]
    y_steps: tuple[float, ...]

    def __post_init__(self):
        if len(self.x_steps) < 2 or len(self.y_steps) < 2:
            raise ValueError("grid distortion needs at least 2 cells per axis")
        if min(self.x_steps) <= 0 or min(self.y_steps) <= 0:
            raise ValueError("grid step scales must be positive")

    @property
    def cells(self) -> int:
        return len(self.x_steps)

    @classmethod
    def identity(cls, cells: int = 5) -> "GridDistortParams":
        return cls((1.0,) * cells, (1.0,) * cells)

    @classmethod
    def sample(cls, rng: np.random.Generator, cells: int = 5, limit: float = 0.3) -> "GridDistortParams":
        if not 0 <= limit < 1:
            raise ValueError(f"limit must lie in [0, 1), got {limit}")
        xs = rng.uniform(1 - limit, 1 + limit, cells)
        ys = rng.uniform(1 - limit, 1 + limit, cells)
        return cls(tuple(xs.tolist()), tuple(ys.tolist()))


@dataclass(frozen=True)
class Augmentation:
    kind: str
    angle: float = 0.0
    grid: Optional[GridDistortParams] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation {self.kind!r}")
        if self.kind == "rotate" and abs(self.angle) > MAX_ROTATION:
            raise ValueError(f"rotation angle {self.angle} outside +-{MAX_ROTATION} degrees")
        if self.kind == "grid_distort" and self.grid is None:
            raise ValueError("grid_distort needs GridDistortParams")


def axis_map(steps: Sequence[float], size: int) -> np.ndarray:
    """Source coordinate for each destination index 0..size-1 along one axis.

    Destination knots sit at equal spacing k*(size-1)/cells. Source knots
    are the cumulative scaled step widths, renormalised so the last knot
    lands on size-1. Between knots the map is linear.
    """
    steps = np.asarray(steps, dtype=np.float64)
    cells = steps.size
    k = np.arange(cells + 1, dtype=np.float64)
    dst = (size - 1) * (k / cells)
    cum = np.r_[0.0, np.cumsum(steps)]
    src = (size - 1) * (cum / cum[-1])
    return np.interp(np.arange(size, dtype=np.float64), dst, src)


def grid_distort_field(params: GridDistortParams, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """(src_y, src_x) coordinate arrays of shape (h, w)."""
    if h < params.cells or w < params.cells:
        raise ShapeError(f"image {(h, w)} smaller than {params.cells} grid cells")
    fy = axis_map(params.y_steps, h)
    fx = axis_map(params.x_steps, w)
    return np.broadcast_to(fy[:, None], (h, w)), np.broadcast_to(fx[None, :], (h, w))


def rotation_field(angle: float, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse map of a counter-clockwise rotation by ``angle`` degrees about the centre."""
    t = np.deg2rad(angle)
    c, s = np.cos(t), np.sin(t)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    return c * yy - s * xx + cy, s * yy + c * xx + cx


def sample_bilinear(arr: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    if arr.dtype.kind != "f":
        info = np.iinfo(arr.dtype)
        out = sample_bilinear(arr.astype(np.float32), sy, sx)
        return np.clip(np.rint(out), info.min, info.max).astype(arr.dtype)
    h, w = arr.shape[-2:]
    padded = np.pad(arr, [(0, 0)] * (arr.ndim - 2) + [(1, 1), (1, 1)])
    # coordinates shift by one for the zero border; anything beyond it reads zero
    y = np.clip(sy + 1, 0, h + 1)
    x = np.clip(sx + 1, 0, w + 1)
    y0 = np.minimum(np.floor(y).astype(np.intp), h)
    x0 = np.minimum(np.floor(x).astype(np.intp), w)
    fy = (y - y0).astype(arr.dtype)
    fx = (x - x0).astype(arr.dtype)
    top = padded[..., y0, x0] * (1 - fx) + padded[..., y0, x0 + 1] * fx
    bot = padded[..., y0 + 1, x0] * (1 - fx) + padded[..., y0 + 1, x0 + 1] * fx
    out = top * (1 - fy) + bot * fy
    outside = (sy <= -1) | (sy >= h) | (sx <= -1) | (sx >= w)
    return np.where(outside, 0, out).astype(arr.dtype)


def sample_nearest(arr: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    h, w = arr.shape[-2:]
    iy = np.floor(sy + 0.5).astype(np.intp)
    ix = np.floor(sx + 0.5).astype(np.intp)
    inside = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    out = arr[..., np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)]
    return np.where(inside, out, np.zeros((), arr.dtype))


def apply(aug: Augmentation, image: np.ndarray, masks: np.ndarray):
    """Apply one geometric transform to an image and its class masks."""
    image = np.asarray(image)
    masks = np.asarray(masks, dtype=bool)
    if image.shape[-2:] != masks.shape[-2:]:
        raise ShapeError(f"image {image.shape} and masks {masks.shape} differ spatially")
    if aug.kind == "hflip":
        return image[..., ::-1].copy(), masks[..., ::-1].copy()
    if aug.kind == "vflip":
        return image[..., ::-1, :].copy(), masks[..., ::-1, :].copy()
    h, w = image.shape[-2:]
    if aug.kind == "rotate":
        sy, sx = rotation_field(aug.angle, h, w)
    else:
        sy, sx = grid_distort_field(aug.grid, h, w)
    return sample_bilinear(image, sy, sx), sample_nearest(masks, sy, sx)


def random_augmentation(rng: np.random.Generator, cells: int = 5, limit: float = 0.3) -> Augmentation:
    kind = KINDS[int(rng.integers(len(KINDS)))]
    if kind == "rotate":
        return Augmentation(kind, angle=float(rng.uniform(-MAX_ROTATION, MAX_ROTATION)))
    if kind == "grid_distort":
        return Augmentation(kind, grid=GridDistortParams.sample(rng, cells, limit))
    return Augmentation(kind)


@dataclass(frozen=True)
class Record:
    name: str
    image: np.ndarray
    masks: np.ndarray
    augmentation: Optional[Augmentation] = None


def record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def augment_dataset(records: Sequence[Record], seed: int = 0) -> list[Record]:
    """Originals followed by one randomly transformed copy of each.

    Each copy's transform comes from a generator seeded by (seed, index), so
    the result is independent of processing order.
    """
    out = list(records)
    for i, rec in enumerate(records):
        aug = random_augmentation(record_rng(seed, i))
        img, msk = apply(aug, rec.image, rec.masks)
        out.append(replace(rec, name=augmented_name(rec.name, aug.kind), image=img, masks=msk,
                           augmentation=aug))
    return out


def augmented_name(name: str, kind: str) -> str:
    stem, dot, ext = name.rpartition(".")
    if not dot:
        return f"{name}_{kind}"
    return f"{stem}_{kind}.{ext}"
