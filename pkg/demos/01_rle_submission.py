"""
Run-length encoding and a scored submission
===========================================

Masks travel as "start length" pairs over column-major, 1-indexed pixels.
This walk-through encodes a few masks, shrinks them to quarter size and
scores a prediction file against a truth file.
"""
import tempfile
from pathlib import Path

import numpy as np

from cloudseg.dataset import load_annotations, score_submission, write_annotations
from cloudseg.rle import Rle, parse_rle, rle_decode, rle_encode, rle_text, scale_mask

# The pair (1, 3) on a 4x4 grid covers the first three pixels of column 0.
mask = rle_decode(parse_rle("1 3"), 4, 4)
print(mask.astype(int))

# Encoding always yields maximal runs; adjacent runs on input get merged.
merged = rle_encode(rle_decode(Rle.from_pairs([(1, 2), (3, 2)]), 4, 4))
print("adjacent runs re-encode as:", rle_text(merged))

# A blob at native resolution, then the quarter-size submission version.
yy, xx = np.mgrid[0:1400, 0:2100]
blob = (yy - 700) ** 2 / 300**2 + (xx - 1000) ** 2 / 500**2 < 1
small = scale_mask(blob)
print("native", blob.shape, "->", small.shape)
print("runs at native size:", len(rle_encode(blob)), " at quarter size:", len(rle_encode(small)))

# Scoring works on CSVs keyed by "<file>_<Class>".
truth = """Image_Label,EncodedPixels
a.jpg_Fish,1 8
a.jpg_Flower,
a.jpg_Gravel,3 4
a.jpg_Sugar,
"""
pred = """Image_Label,EncodedPixels
a.jpg_Fish,5 8
a.jpg_Flower,
a.jpg_Gravel,
"""
report = score_submission(pred, truth)
# Fish 2*4/16, Flower both empty -> 1, Gravel missed -> 0, Sugar missing row -> empty -> 1
print("mean Dice:", report["mean_dice"])
print("per class:", report["per_class"])

# Round-tripping through a file keeps every pair.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "truth.csv"
    write_annotations(load_annotations(truth), path)
    print(path.read_text())
