"""
Training a segmentation head with RAdam
=======================================

Full-network training is out of reach on a laptop, so this fits only the
1x1 four-class head on frozen per-pixel features of a synthetic texture
dataset. The loss is 0.7 cross-entropy + 0.3 soft Dice and the optimizer
is Rectified Adam.
"""
import time

import numpy as np

from cloudseg.radam import RAdamHyperparams, RAdamState, head_mean_dice, radam_step, rho, train_head
from cloudseg.synthetic import synthetic_dataset, texture_features

# RAdam takes plain momentum steps until the variance estimate settles.
print("rho_t for t = 1..6:", [round(rho(t), 3) for t in range(1, 7)])

x = np.full(3, 5.0)
state = RAdamState.zeros(3)
for t in range(300):
    x, state = radam_step(state, x, 2 * x, RAdamHyperparams(lr=0.1))
print("minimising sum(x^2) from 5s, after 300 steps:", x)

# 200 images of four textures: horizontal stripes, vertical stripes,
# checkerboard and flat bright regions, plus occasional black bands.
records = synthetic_dataset(200, 64, seed=0)
images = np.stack([r.image for r in records]).astype(np.float32) / 255
masks = np.stack([r.masks for r in records])
feats = texture_features(images)
print("features", feats.shape, "masks", masks.shape)

order = np.random.default_rng(0).permutation(len(records))
tr, va = order[:160], order[160:]

start = time.perf_counter()
res = train_head(feats[tr], masks[tr].astype(np.float64), RAdamHyperparams(lr=0.05), epochs=30, batch=16, seed=0)
print(f"trained in {time.perf_counter() - start:.1f} s")
print("loss by epoch:", " ".join(f"{v:.3f}" for v in res.loss_history[::5]))

zero_w, zero_b = np.zeros_like(res.weight), np.zeros_like(res.bias)
print("val Dice before:", round(head_mean_dice(feats[va], masks[va], zero_w, zero_b), 3))
print("val Dice after: ", round(head_mean_dice(feats[va], masks[va], res.weight, res.bias), 3))
