"""Run-length mask encoding in the Kaggle submission format.

Pixels are numbered from 1, top to bottom within a column, then columns
left to right (column-major). A run ``(start, length)`` sets pixels
``start .. start + length - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RleError(ValueError):
    """Malformed run-length data."""


@dataclass(frozen=True, eq=False)
class Rle:
    starts: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.starts, dtype=np.int64).ravel()
        n = np.asarray(self.lengths, dtype=np.int64).ravel()
        if s.shape != n.shape:
            raise RleError(f"{s.size} starts but {n.size} lengths")
        object.__setattr__(self, "starts", s)
        object.__setattr__(self, "lengths", n)

    @classmethod
    def from_pairs(cls, pairs) -> "Rle":
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def empty(cls) -> "Rle":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64))

    @property
    def runs(self) -> list[tuple[int, int]]:
        return list(zip(self.starts.tolist(), self.lengths.tolist()))

    @property
    def area(self) -> int:
        return int(self.lengths.sum())

    def __len__(self):
        return self.starts.size

    def __eq__(self, other):
        if not isinstance(other, Rle):
            return NotImplemented
        return np.array_equal(self.starts, other.starts) and np.array_equal(self.lengths, other.lengths)

    def __repr__(self):
        return f"Rle({self.runs!r})" if len(self) <= 8 else f"Rle(<{len(self)} runs>)"

    def __str__(self):
        return rle_text(self)


def rle_encode(mask) -> Rle:
    """Canonical (maximal-run) encoding of a 2-D boolean mask."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise RleError(f"expected a 2-D mask, got shape {mask.shape}")
    flat = np.asarray(mask, dtype=bool).ravel(order="F").view(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate(([0], flat, [0]))))
    starts, ends = edges[0::2], edges[1::2]
    return Rle(starts + 1, ends - starts)


def _validate(rle: Rle, total: int | None) -> None:
    s, n = rle.starts, rle.lengths
    bad = np.flatnonzero((s < 1) | (n < 1))
    if bad.size:
        i = int(bad[0])
        raise RleError(f"run {i}: start and length must be positive, got ({s[i]}, {n[i]})")
    if total is not None:
        bad = np.flatnonzero(s + n - 1 > total)
        if bad.size:
            i = int(bad[0])
            raise RleError(f"run {i} ({s[i]}, {n[i]}) ends past the last pixel {total}")
    order = np.argsort(s, kind="stable")
    ss, nn = s[order], n[order]
    clash = np.flatnonzero(ss[1:] < ss[:-1] + nn[:-1])
    if clash.size:
        i = int(order[clash[0] + 1])
        raise RleError(f"run {i} ({s[i]}, {n[i]}) overlaps run {int(order[clash[0]])}")


def rle_decode(rle: Rle, height: int, width: int) -> np.ndarray:
    """Boolean (height, width) mask from column-major runs. Overlaps are rejected."""
    total = height * width
    _validate(rle, total)
    edges = np.bincount(rle.starts - 1, minlength=total + 1)
    edges -= np.bincount(rle.starts - 1 + rle.lengths, minlength=total + 1)
    return np.cumsum(edges[:-1]).astype(bool).reshape((height, width), order="F")


def rle_text(rle: Rle) -> str:
    """Space-delimited ``"s1 l1 s2 l2 ..."``; empty for an empty encoding."""
    pairs = np.stack([rle.starts, rle.lengths], axis=1).ravel().tolist()
    return " ".join(["%d"] * len(pairs)) % tuple(pairs)


def parse_rle(text: str) -> Rle:
    tokens = text.split()
    if len(tokens) % 2:
        raise RleError(f"odd number of tokens ({len(tokens)}); expected start/length pairs")
    if not tokens:
        return Rle.empty()
    try:
        values = np.array(tokens, dtype=np.int64)
    except (ValueError, OverflowError):
        for i, tok in enumerate(tokens):
            if not tok.isdigit():
                raise RleError(f"token {i} ({tok!r}) is not a non-negative integer") from None
        raise
    bad = np.flatnonzero(values < 1)
    if bad.size:
        i = int(bad[0])
        raise RleError(f"token {i} ({tokens[i]!r}) must be a positive integer")
    return Rle(values[0::2], values[1::2])


def scale_mask(mask, factor: float = 0.25) -> np.ndarray:
    """Nearest-neighbour downscale by ``factor = 1/k``.

    Output pixel (i, j) copies source pixel (k*i + k//2, k*j + k//2), the
    centre sample of its k x k cell. Height and width must divide by k.
    """
    mask = np.asarray(mask, dtype=bool)
    k = round(1 / factor)
    if k < 1 or abs(k * factor - 1) > 1e-9:
        raise ValueError(f"factor must be 1/k for a positive integer k, got {factor}")
    h, w = mask.shape
    if h % k or w % k:
        raise ValueError(f"mask dims {(h, w)} not divisible by {k}")
    return mask[k // 2::k, k // 2::k].copy()


def rle_union_dice(a: Rle, b: Rle) -> float:
    """Dice of two encodings over the same pixel grid, without knowing its shape."""
    if len(a) == 0 and len(b) == 0:
        return 1.0
    _validate(a, None)
    _validate(b, None)
    total = max(int((r.starts + r.lengths).max()) if len(r) else 0 for r in (a, b))
    ma = rle_decode(a, total, 1).ravel()
    mb = rle_decode(b, total, 1).ravel()
    denom = int(ma.sum()) + int(mb.sum())
    return 2.0 * int((ma & mb).sum()) / denom
