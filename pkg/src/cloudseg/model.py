"""EfficientUNet: EfficientNet encoder plus a UNet-style expansion path.

Each of the five decoder blocks upsamples bilinearly by two, concatenates
the encoder feature map of matching resolution (none for the last block,
which reaches full resolution), and applies 3x3 conv + BN + ReLU layers.
A pointwise head maps the final 16 channels to four class logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np

from .encoder import (
    BN_FIELDS,
    EncoderConfig,
    count_params,
    encoder_forward,
    encoder_param_shapes,
    is_trainable,
    variant_config,
)
from .tensor import (
    ConvWeights,
    ShapeError,
    activate,
    as_tensor,
    batchnorm_infer,
    bilinear_upsample2x,
    concat_channels,
    conv2d,
    resize_bilinear,
)
from .weights import WeightStoreError, check_against, load_weights

CLASSES = ("Fish", "Flower", "Gravel", "Sugar")
DECODER_BN_EPS = 1e-5
NATIVE_SIZE = (1400, 2100)
MODEL_INPUT_SIZE = (1312, 2080)


@dataclass(frozen=True)
class DecoderConfig:
    channels: tuple[int, ...] = (256, 128, 64, 32, 16)
    convs_per_block: int = 2

    def __post_init__(self):
        if len(self.channels) != 5:
            raise ValueError(f"decoder needs 5 levels to match the encoder taps, got {self.channels}")
        if self.convs_per_block < 1 or min(self.channels) < 1:
            raise ValueError(f"invalid decoder config {self}")


@dataclass(frozen=True)
class SegmentationModel:
    encoder: EncoderConfig
    decoder: DecoderConfig
    weights: Mapping[str, np.ndarray] = field(repr=False)
    num_classes: int = len(CLASSES)


def decoder_param_shapes(enc: EncoderConfig, dec: DecoderConfig,
                         num_classes: int = len(CLASSES)) -> dict[str, tuple]:
    taps = enc.tap_channels
    skips = [taps[3], taps[2], taps[1], taps[0], 0]
    shapes: dict[str, tuple] = {}
    prev = taps[4]
    for k, (out_c, skip_c) in enumerate(zip(dec.channels, skips)):
        cin = prev + skip_c
        for j in range(dec.convs_per_block):
            shapes[f"decoder.blocks.{k}.conv{j}.weight"] = (out_c, cin, 3, 3)
            for f in BN_FIELDS:
                shapes[f"decoder.blocks.{k}.conv{j}.bn.{f}"] = (out_c,)
            cin = out_c
        prev = out_c
    shapes["head.weight"] = (num_classes, prev, 1, 1)
    shapes["head.bias"] = (num_classes,)
    return shapes


def model_param_shapes(enc: EncoderConfig, dec: DecoderConfig) -> dict[str, tuple]:
    shapes = encoder_param_shapes(enc)
    shapes.update(decoder_param_shapes(enc, dec))
    return shapes


def decoder_parameter_count(enc: EncoderConfig, dec: Optional[DecoderConfig] = None) -> int:
    """Decoder convs, BN scale/shift and the 4-class head."""
    return count_params(decoder_param_shapes(enc, dec or DecoderConfig()))


def initialize(shapes: Mapping[str, tuple], init: str = "random", seed: int = 0) -> dict[str, np.ndarray]:
    """Fresh weights for ``shapes``.

    BN layers always start as the identity (gamma 1, beta 0, mean 0, var 1)
    and biases at zero. Kernels are zero for ``init="zeros"`` and He-normal
    draws from ``default_rng(seed)`` for ``init="random"``.
    """
    if init not in ("zeros", "random"):
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name.endswith((".gamma", ".var")):
            arr = np.ones(shape, np.float32)
        elif len(shape) == 4 and init == "random":
            fan_in = shape[1] * shape[2] * shape[3]
            arr = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        else:
            arr = np.zeros(shape, np.float32)
        out[name] = arr
    return out


def build_efficientunet(variant: str = "b0", dec: Optional[DecoderConfig] = None,
                        init: str = "random", seed: int = 0, store=None,
                        strict: bool = True) -> SegmentationModel:
    """Assemble an EfficientUNet.

    ``init`` is ``"zeros"``, ``"random"`` (alias ``"seeded-random"``) or
    ``"weight-store"``. For a weight store, ``strict=True`` requires the
    manifest to list exactly the model's parameters in order; with
    ``strict=False`` the store may hold any subset (e.g. only the head),
    laid over a seeded random init.
    """
    enc = variant_config(variant)
    dec = dec or DecoderConfig()
    shapes = model_param_shapes(enc, dec)
    if init == "seeded-random":
        init = "random"
    if init == "weight-store":
        if store is None:
            raise ValueError("init='weight-store' needs a store directory")
        loaded = load_weights(store) if not isinstance(store, Mapping) else dict(store)
        if strict:
            check_against(loaded, shapes)
            weights = loaded
        else:
            weights = initialize(shapes, "random", seed)
            for i, (name, arr) in enumerate(loaded.items()):
                if name not in shapes:
                    raise WeightStoreError(f"entry {i}: {name!r} is not a parameter of EfficientUNet-{variant}")
                if tuple(arr.shape) != shapes[name]:
                    raise WeightStoreError(
                        f"entry {i} ({name}): expected shape {shapes[name]}, found {tuple(arr.shape)}"
                    )
                weights[name] = np.asarray(arr, np.float32)
    else:
        weights = initialize(shapes, init, seed)
    return SegmentationModel(enc, dec, MappingProxyType(weights))


def decoder_block(deep: np.ndarray, skip: Optional[np.ndarray],
                  weights: Mapping[str, np.ndarray], out_channels: int) -> np.ndarray:
    """upsample x2 -> concat skip -> (3x3 conv -> BN -> ReLU) x convs.

    ``weights`` holds ``conv{j}.weight`` and ``conv{j}.bn.*`` for j = 0, 1, ...
    """
    x = bilinear_upsample2x(as_tensor(deep))
    if skip is not None:
        skip = as_tensor(skip)
        if skip.shape[2:] != x.shape[2:]:
            raise ShapeError(
                f"skip spatial dims {skip.shape[2:]} must be twice the deep dims {deep.shape[2:]}"
            )
        x = concat_channels(x, skip)
    j = 0
    while f"conv{j}.weight" in weights:
        kernel = weights[f"conv{j}.weight"]
        x = conv2d(x, ConvWeights(kernel, padding=1))
        x = batchnorm_infer(x, eps=DECODER_BN_EPS, **{f: weights[f"conv{j}.bn.{f}"] for f in BN_FIELDS})
        x = activate(x, "relu")
        j += 1
    if j == 0:
        raise ValueError("decoder block weights contain no conv layers")
    if x.shape[1] != out_channels:
        raise ShapeError(f"decoder block produced {x.shape[1]} channels, expected {out_channels}")
    return x


def _block_weights(weights, k):
    p = f"decoder.blocks.{k}."
    return {name[len(p):]: v for name, v in weights.items() if name.startswith(p)}


def decoder_features(model: SegmentationModel, x: np.ndarray) -> np.ndarray:
    """Output of the last decoder block (before the head), at input resolution."""
    x = as_tensor(x)
    if x.shape[1] != 3 or x.shape[2] % 32 or x.shape[3] % 32:
        raise ShapeError(
            f"model input must be (n, 3, h, w) with h, w multiples of 32; got {x.shape}"
        )
    feats = encoder_forward(x, model.encoder, model.weights)
    d = feats[-1]
    skips = [feats[3], feats[2], feats[1], feats[0], None]
    for k, (skip, out_c) in enumerate(zip(skips, model.decoder.channels)):
        d = decoder_block(d, skip, _block_weights(model.weights, k), out_c)
    return d


def apply_head(features: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return conv2d(features, ConvWeights(np.asarray(weight, np.float32), np.asarray(bias, np.float32)))


def model_forward(model: SegmentationModel, x: np.ndarray) -> np.ndarray:
    """Class logits of shape (n, 4, h, w); apply ``softmax_channels`` for probabilities."""
    d = decoder_features(model, x)
    return apply_head(d, model.weights["head.weight"], model.weights["head.bias"])


def prepare_input(image: np.ndarray, target=MODEL_INPUT_SIZE) -> np.ndarray:
    """8-bit HxWx3 (or HxW grayscale) image -> (1, 3, H, W) float32 in [0, 1]."""
    img = np.asarray(image)
    if img.size == 0:
        raise ShapeError("cannot prepare an empty image")
    th, tw = target
    if th % 32 or tw % 32:
        raise ShapeError(f"target size {target} must be multiples of 32")
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise ShapeError(f"expected HxWx3 image, got shape {img.shape}")
    chw = np.ascontiguousarray(img[:, :, :3].transpose(2, 0, 1), dtype=np.float32) / np.float32(255)
    return resize_bilinear(chw, (th, tw))[None]


def trainable_count(model: SegmentationModel) -> int:
    return sum(v.size for k, v in model.weights.items() if is_trainable(k))
