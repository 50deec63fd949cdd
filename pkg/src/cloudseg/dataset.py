"""Annotation CSVs, train/validation splits, prediction -> submission, scoring.

CSV layout follows the competition format::

    Image_Label,EncodedPixels
    0011165.jpg_Fish,264918 937 266318 937 ...
    0011165.jpg_Flower,
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .model import CLASSES, MODEL_INPUT_SIZE, NATIVE_SIZE, SegmentationModel, model_forward, prepare_input
from .rle import Rle, RleError, parse_rle, rle_decode, rle_encode, rle_text, rle_union_dice, scale_mask
from .tensor import ShapeError, resize_bilinear, softmax_channels

HEADER = ["Image_Label", "EncodedPixels"]
SUBMISSION_SCALE = 0.25


class AnnotationError(ValueError):
    """Problem in an annotation or submission CSV; message carries the line number."""


@dataclass(frozen=True)
class SubmissionRecord:
    image_label: str
    encoded_pixels: str = ""

    @property
    def filename(self) -> str:
        return self.image_label.rsplit("_", 1)[0]

    @property
    def class_name(self) -> str:
        return self.image_label.rsplit("_", 1)[1]


@dataclass
class DatasetIndex:
    """Images in file order plus one Rle per (image, class)."""

    images: list[str] = field(default_factory=list)
    annotations: dict[tuple[str, str], Rle] = field(default_factory=dict)
    dims: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    def shape_of(self, filename: str) -> tuple[int, int]:
        return self.dims.get(filename, NATIVE_SIZE)

    def masks(self, filename: str, shape=None) -> np.ndarray:
        """(4, h, w) boolean masks in class order."""
        h, w = shape or self.shape_of(filename)
        return np.stack([rle_decode(self.annotations[(filename, c)], h, w) for c in CLASSES])

    def subset(self, names: Iterable[str]) -> "DatasetIndex":
        names = list(names)
        return DatasetIndex(
            names,
            {(n, c): self.annotations[(n, c)] for n in names for c in CLASSES},
            {n: self.dims[n] for n in names if n in self.dims},
        )

    def records(self) -> list[SubmissionRecord]:
        return [SubmissionRecord(f"{n}_{c}", rle_text(self.annotations[(n, c)]))
                for n in self.images for c in CLASSES]


def _split_label(label: str, lineno: int) -> tuple[str, str]:
    filename, sep, cls = label.rpartition("_")
    if not sep or not filename:
        raise AnnotationError(f"line {lineno}: Image_Label {label!r} is not '<file>_<Class>'")
    if cls not in CLASSES:
        raise AnnotationError(f"line {lineno}: unknown class {cls!r} (expected one of {', '.join(CLASSES)})")
    return filename, cls


def load_annotations(source) -> DatasetIndex:
    """Parse an annotation CSV (path, file object or CSV text).

    Classes an image does not list are filled in as empty encodings, so
    every image ends up with four entries.
    """
    if isinstance(source, str) and ("\n" in source or not source):
        text = source
    elif hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, (str, Path)) and Path(source).is_file():
        text = Path(source).read_text()
    else:
        raise FileNotFoundError(f"annotation file not found: {source}")
    reader = csv.reader(io.StringIO(text))
    index = DatasetIndex()
    seen: set[str] = set()
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != HEADER:
        raise AnnotationError(f"line 1: expected header {','.join(HEADER)!r}, got {header!r}")
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise AnnotationError(f"line {lineno}: expected 2 columns, got {len(row)}")
        filename, cls = _split_label(row[0].strip(), lineno)
        key = (filename, cls)
        if key in index.annotations:
            raise AnnotationError(f"line {lineno}: duplicate entry for {filename}_{cls}")
        try:
            index.annotations[key] = parse_rle(row[1])
        except RleError as exc:
            raise AnnotationError(f"line {lineno}: {exc}") from None
        if filename not in seen:
            seen.add(filename)
            index.images.append(filename)
    for filename in index.images:
        for cls in CLASSES:
            index.annotations.setdefault((filename, cls), Rle.empty())
    return index


def write_annotations(records: Union[DatasetIndex, Sequence[SubmissionRecord]], path) -> Path:
    if isinstance(records, DatasetIndex):
        records = records.records()
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for rec in records:
            writer.writerow([rec.image_label, rec.encoded_pixels])
    return path


def split_train_val(index: DatasetIndex, train_fraction: float = 0.8, seed: int = 0):
    """Image-level split; all four class rows of an image land on the same side.

    ``round(train_fraction * N)`` images (halves rounded up) go to train.
    Both halves keep the original image order.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(index.images)
    n_train = int(math.floor(train_fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    in_train = np.zeros(n, dtype=bool)
    in_train[perm[:n_train]] = True
    train = [name for name, t in zip(index.images, in_train) if t]
    val = [name for name, t in zip(index.images, in_train) if not t]
    return index.subset(train), index.subset(val)


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Strictly-greater-than threshold; a probability equal to it is excluded."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return np.asarray(probs) > threshold


def _pool_mean(probs: np.ndarray, k: int) -> np.ndarray:
    c, h, w = probs.shape
    if h % k or w % k:
        raise ValueError(f"prob map {(h, w)} not divisible by {k}")
    return probs.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))


def masks_from_probs(probs: np.ndarray, threshold: float = 0.5, scale: str = "quarter",
                     scale_order: str = "threshold-first") -> np.ndarray:
    """(4, h, w) probabilities at native size -> (4, h', w') submission masks.

    ``threshold-first`` binarises then takes the cell-centre sample;
    ``scale-first`` averages each 4x4 cell of probabilities, then binarises.
    """
    if scale == "native":
        return binarize(probs, threshold)
    if scale != "quarter":
        raise ValueError(f"scale must be 'native' or 'quarter', got {scale!r}")
    if scale_order == "threshold-first":
        return np.stack([scale_mask(m, SUBMISSION_SCALE) for m in binarize(probs, threshold)])
    if scale_order == "scale-first":
        return binarize(_pool_mean(probs, round(1 / SUBMISSION_SCALE)), threshold)
    raise ValueError(f"unknown scale_order {scale_order!r}")


def _read_image(source) -> np.ndarray:
    if isinstance(source, np.ndarray):
        return source
    from PIL import Image

    with Image.open(source) as im:
        return np.asarray(im.convert("RGB"))


@dataclass
class PredictionReport:
    records: list[SubmissionRecord]
    failures: list[tuple[str, str]]


def predict_and_encode(model: SegmentationModel, images, threshold: float = 0.5,
                       scale: str = "quarter", size=MODEL_INPUT_SIZE,
                       scale_order: str = "threshold-first", threads: int = 1) -> PredictionReport:
    """Run the model on each ``(name, image-or-path)`` and emit 4 records per image.

    Probabilities are resized back to the image's native size before
    thresholding. Images that fail to load or have unusable shapes are
    reported in ``failures`` and skipped.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")

    def one(item):
        name, source = item
        try:
            img = _read_image(source)
            x = prepare_input(img, size)
        except (OSError, ShapeError, ValueError) as exc:
            return name, None, f"{type(exc).__name__}: {exc}"
        native = img.shape[:2]
        probs = softmax_channels(model_forward(model, x))[0]
        if probs.shape[1:] != native:
            probs = resize_bilinear(probs, native)
        try:
            masks = masks_from_probs(probs, threshold, scale, scale_order)
        except ValueError as exc:
            return name, None, str(exc)
        return name, [SubmissionRecord(f"{name}_{c}", rle_text(rle_encode(m)))
                      for c, m in zip(CLASSES, masks)], None

    items = list(images)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    records, failures = [], []
    for name, recs, err in results:
        if err is not None:
            failures.append((name, err))
        else:
            records.extend(recs)
    return PredictionReport(records, failures)


def score_submission(pred, truth) -> dict:
    """Mean Dice over every (image, class) pair of the ground truth.

    Pairs missing from the prediction count as empty masks; prediction
    images unknown to the truth file are an error.
    """
    pred = pred if isinstance(pred, DatasetIndex) else load_annotations(pred)
    truth = truth if isinstance(truth, DatasetIndex) else load_annotations(truth)
    extra = [k for k in pred.annotations if k not in truth.annotations]
    if extra:
        raise AnnotationError(f"prediction {extra[0][0]}_{extra[0][1]} is not in the ground truth")
    per_class: dict[str, list[float]] = {c: [] for c in CLASSES}
    scores = []
    for (filename, cls), t in truth.annotations.items():
        p = pred.annotations.get((filename, cls), Rle.empty())
        d = rle_union_dice(p, t)
        per_class[cls].append(d)
        scores.append(d)
    return {
        "mean_dice": math.fsum(scores) / len(scores) if scores else float("nan"),
        "per_class": {c: (math.fsum(v) / len(v) if v else float("nan")) for c, v in per_class.items()},
        "n_pairs": len(scores),
    }
