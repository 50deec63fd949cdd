"""On-disk weight store: ``manifest.json`` plus raw little-endian float32 ``weights.bin``.

The manifest is an ordered JSON list of ``{"name", "shape", "offset"}``
entries. ``offset`` is the byte offset of the array inside ``weights.bin``;
arrays are concatenated in manifest order with no padding.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

MANIFEST = "manifest.json"
BLOB = "weights.bin"


class WeightStoreError(ValueError):
    """Manifest or blob inconsistent with what the caller expects."""


def save_weights(directory, weights: Mapping[str, np.ndarray]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    offset = 0
    with open(directory / BLOB, "wb") as fh:
        for name, arr in weights.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            manifest.append({"name": name, "shape": list(data.shape), "offset": offset})
            fh.write(data.tobytes())
            offset += data.nbytes
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1))
    return directory


def load_weights(directory) -> dict[str, np.ndarray]:
    """Read every array of a store, in manifest order."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    blob = np.fromfile(directory / BLOB, dtype="<f4")
    out: dict[str, np.ndarray] = {}
    for i, entry in enumerate(manifest):
        try:
            name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError) as exc:
            raise WeightStoreError(f"manifest entry {i} malformed: {entry!r}") from exc
        if offset % 4:
            raise WeightStoreError(f"manifest entry {i} ({name}): offset {offset} not float aligned")
        size = int(np.prod(shape, dtype=np.int64))
        start = offset // 4
        if start + size > blob.size:
            raise WeightStoreError(
                f"manifest entry {i} ({name}): needs floats [{start}, {start + size}) "
                f"but {BLOB} holds {blob.size}"
            )
        if name in out:
            raise WeightStoreError(f"manifest entry {i}: duplicate name {name!r}")
        out[name] = blob[start:start + size].reshape(shape).astype(np.float32)
    return out


def check_against(weights: Mapping[str, np.ndarray], expected: Mapping[str, tuple]) -> None:
    """Raise on the first entry whose name or shape differs from ``expected`` (ordered)."""
    got = list(weights.items())
    want = list(expected.items())
    for i, ((gname, garr), (wname, wshape)) in enumerate(zip(got, want)):
        if gname != wname:
            raise WeightStoreError(f"entry {i}: expected {wname!r}, found {gname!r}")
        if tuple(garr.shape) != tuple(wshape):
            raise WeightStoreError(
                f"entry {i} ({gname}): expected shape {tuple(wshape)}, found {tuple(garr.shape)}"
            )
    if len(got) != len(want):
        i = min(len(got), len(want))
        if len(got) < len(want):
            raise WeightStoreError(f"entry {i}: expected {want[i][0]!r}, store ends after {len(got)} entries")
        raise WeightStoreError(f"entry {i}: unexpected extra entry {got[i][0]!r}")
