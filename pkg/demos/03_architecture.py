"""
EfficientUNet shapes and sizes
==============================

Each EfficientNet variant is the B0 table with widths and depths scaled
up. The UNet decoder climbs back to input resolution through the encoder's
five skip taps. Nothing here is trained; weights are seeded random.
"""
import time

import numpy as np

from cloudseg.encoder import VARIANTS, encoder_forward, parameter_count, variant_config
from cloudseg.model import build_efficientunet, decoder_parameter_count, model_forward

print(f"{'variant':8s}{'stem':>6s}{'blocks':>8s}{'taps':>28s}{'encoder':>12s}{'decoder':>11s}")
for v in VARIANTS:
    cfg = variant_config(v)
    print(f"{v:8s}{cfg.stem_channels:6d}{sum(b.repeats for b in cfg.blocks):8d}"
          f"{str(cfg.tap_channels):>28s}{parameter_count(cfg):12,d}{decoder_parameter_count(cfg):11,d}")

# The B0 stage table.
for b in variant_config("b0").blocks:
    print(f"  MBConv{b.expansion_ratio} k{b.kernel_size} s{b.stride}  {b.in_channels:3d} -> {b.out_channels:3d}  x{b.repeats}")

# Skip taps sit at strides 2, 4, 8, 16 and 32.
model = build_efficientunet("b0", init="random", seed=0)
x = np.random.default_rng(0).random((1, 3, 128, 160), dtype=np.float32)
for f in encoder_forward(x, model.encoder, model.weights):
    print("tap", f.shape)

start = time.perf_counter()
logits = model_forward(model, x)
print("logits", logits.shape, f"in {time.perf_counter() - start:.2f} s")

# Any height and width divisible by 32 works; others are rejected.
try:
    model_forward(model, np.zeros((1, 3, 100, 160), np.float32))
except ValueError as exc:
    print("rejected:", exc)
