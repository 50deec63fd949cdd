"""
Joint image and mask augmentation
=================================

Every training image gets one extra copy under a randomly chosen
transform: a flip, a rotation of at most 20 degrees, or a grid
distortion. Images are resampled bilinearly and masks nearest-neighbour,
so masks stay binary.
"""
from collections import Counter

import numpy as np

from cloudseg.augment import Augmentation, GridDistortParams, apply, augment_dataset, axis_map
from cloudseg.synthetic import synthetic_dataset

records = synthetic_dataset(8, 64, seed=1)
rec = records[0]

# Flips undo themselves exactly.
img, m = apply(Augmentation("hflip"), *apply(Augmentation("hflip"), rec.image, rec.masks))
print("hflip twice is identity:", np.array_equal(img, rec.image) and np.array_equal(m, rec.masks))

# Rotation exposes black corners and keeps the mask binary.
img, m = apply(Augmentation("rotate", angle=20.0), rec.image, rec.masks)
print("rotated corner pixel:", img[:, 0, 0], " mask dtype:", m.dtype)

# Grid distortion stretches cells along each axis. With two cells scaled
# (2, 1) the middle knot moves from 49.5 to 66 on a width of 100.
col = axis_map((2.0, 1.0), 100)
print("source column for destination 0, 49, 50, 99:", np.round(col[[0, 49, 50, 99]], 3))

params = GridDistortParams.sample(np.random.default_rng(3))
img, m = apply(Augmentation("grid_distort", grid=params), rec.image, rec.masks)
print("grid steps x:", np.round(params.x_steps, 2))
print("class pixel counts before/after:", rec.masks.sum(axis=(1, 2)), m.sum(axis=(1, 2)))

# augment_dataset returns originals followed by one copy each.
out = augment_dataset(records, seed=0)
print(len(records), "->", len(out), "records")
print([r.name for r in out[8:]])
print(Counter(r.augmentation.kind for r in out[8:]))
