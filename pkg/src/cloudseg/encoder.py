"""EfficientNet encoder: B0 block table, compound scaling to B1-B5, forward pass.

The encoder is the contracting half of the segmentation network. It
returns five feature maps at strides 2, 4, 8, 16 and 32, taken at the
last block of each spatial resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np

from .tensor import (
    ConvWeights,
    ShapeError,
    activate,
    as_tensor,
    batchnorm_infer,
    conv2d,
    depthwise_conv2d,
    global_avg_pool,
)

BN_EPS = 1e-3
BN_FIELDS = ("gamma", "beta", "mean", "var")


@dataclass(frozen=True)
class BlockSpec:
    """One MBConv stage. ``repeats > 1`` means the block is stacked that many times."""

    expansion_ratio: int
    kernel_size: int
    stride: int
    in_channels: int
    out_channels: int
    repeats: int = 1
    se_ratio: Optional[float] = 0.25

    def __post_init__(self):
        if self.expansion_ratio < 1 or self.kernel_size % 2 == 0 or self.stride not in (1, 2):
            raise ValueError(f"invalid block spec {self}")
        if min(self.in_channels, self.out_channels, self.repeats) < 1:
            raise ValueError(f"invalid block spec {self}")
        if self.se_ratio is not None and not 0 < self.se_ratio <= 1:
            raise ValueError(f"se_ratio must lie in (0, 1], got {self.se_ratio}")

    @property
    def expanded_channels(self) -> int:
        return self.in_channels * self.expansion_ratio

    @property
    def se_channels(self) -> int:
        # squeeze width follows the block input, as in the reference EfficientNet
        return max(1, int(self.in_channels * self.se_ratio)) if self.se_ratio else 0

    @property
    def has_residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels

    def unrolled(self) -> list["BlockSpec"]:
        """The individual blocks of this stage; only the first one changes stride/width."""
        first = replace(self, repeats=1)
        rest = replace(self, repeats=1, stride=1, in_channels=self.out_channels)
        return [first] + [rest] * (self.repeats - 1)


@dataclass(frozen=True)
class ScalingCoefficients:
    width_mult: float
    depth_mult: float
    resolution: int

    def __post_init__(self):
        if self.width_mult <= 0 or self.depth_mult <= 0 or self.resolution <= 0:
            raise ValueError(f"scaling coefficients must be positive: {self}")


VARIANTS: dict[str, ScalingCoefficients] = {
    "b0": ScalingCoefficients(1.0, 1.0, 224),
    "b1": ScalingCoefficients(1.0, 1.1, 240),
    "b2": ScalingCoefficients(1.1, 1.2, 260),
    "b3": ScalingCoefficients(1.2, 1.4, 300),
    "b4": ScalingCoefficients(1.4, 1.8, 380),
    "b5": ScalingCoefficients(1.6, 2.2, 456),
}


@dataclass(frozen=True)
class EncoderConfig:
    variant: str
    stem_channels: int
    blocks: tuple[BlockSpec, ...]
    stem_kernel: int = 3
    stem_stride: int = 2
    in_channels: int = 3

    def __post_init__(self):
        prev = self.stem_channels
        for k, b in enumerate(self.blocks):
            if b.in_channels != prev:
                raise ValueError(
                    f"channel chain broken at block {k}: in_channels {b.in_channels} != {prev}"
                )
            prev = b.out_channels
        if len(self.tap_indices()) != 5:
            raise ValueError("encoder config must expose exactly 5 feature resolutions")

    def instances(self) -> list[BlockSpec]:
        return [blk for stage in self.blocks for blk in stage.unrolled()]

    def tap_indices(self) -> list[int]:
        """Indices into :meth:`instances` whose outputs feed the decoder."""
        inst = self.instances()
        return [
            i for i in range(len(inst))
            if i == len(inst) - 1 or inst[i + 1].stride == 2
        ]

    @property
    def tap_channels(self) -> tuple[int, ...]:
        inst = self.instances()
        return tuple(inst[i].out_channels for i in self.tap_indices())


def baseline_b0_config() -> EncoderConfig:
    # (expansion, kernel, stride, out_channels, repeats)
    table = [
        (1, 3, 1, 16, 1),
        (6, 3, 2, 24, 2),
        (6, 5, 2, 40, 2),
        (6, 3, 2, 80, 3),
        (6, 5, 1, 112, 3),
        (6, 5, 2, 192, 4),
        (6, 3, 1, 320, 1),
    ]
    blocks, prev = [], 32
    for e, k, s, out, r in table:
        blocks.append(BlockSpec(e, k, s, prev, out, r, 0.25))
        prev = out
    return EncoderConfig("b0", 32, tuple(blocks))


def round_channels(c: int, width_mult: float, divisor: int = 8) -> int:
    """Scale a channel count and snap it to the nearest multiple of ``divisor``."""
    scaled = c * width_mult
    new = max(divisor, int(scaled + divisor / 2) // divisor * divisor)
    if new < 0.9 * scaled:
        new += divisor
    return new


def round_repeats(r: int, depth_mult: float) -> int:
    return int(math.ceil(r * depth_mult))


def scale_config(base: EncoderConfig, coeffs: ScalingCoefficients, variant: str = "") -> EncoderConfig:
    """Apply width and depth multipliers to every stage of ``base``."""
    w, d = coeffs.width_mult, coeffs.depth_mult
    blocks = tuple(
        replace(
            b,
            in_channels=round_channels(b.in_channels, w),
            out_channels=round_channels(b.out_channels, w),
            repeats=round_repeats(b.repeats, d),
        )
        for b in base.blocks
    )
    if not variant:
        matches = [k for k, v in VARIANTS.items() if v == coeffs]
        variant = matches[0] if matches else "custom"
    return replace(base, variant=variant, stem_channels=round_channels(base.stem_channels, w),
                   blocks=blocks)


def variant_config(variant: str) -> EncoderConfig:
    key = variant.lower()
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return scale_config(baseline_b0_config(), VARIANTS[key], key)


# ---------------------------------------------------------------- parameters

def _bn_shapes(prefix: str, c: int) -> dict[str, tuple]:
    return {f"{prefix}.{f}": (c,) for f in BN_FIELDS}


def block_param_shapes(spec: BlockSpec, prefix: str = "") -> dict[str, tuple]:
    """Ordered parameter shapes of a single (unrolled) MBConv block."""
    p = f"{prefix}." if prefix else ""
    cin, cexp, cout, k = spec.in_channels, spec.expanded_channels, spec.out_channels, spec.kernel_size
    shapes: dict[str, tuple] = {}
    if spec.expansion_ratio != 1:
        shapes[f"{p}expand.conv"] = (cexp, cin, 1, 1)
        shapes.update(_bn_shapes(f"{p}expand.bn", cexp))
    shapes[f"{p}dw.conv"] = (cexp, 1, k, k)
    shapes.update(_bn_shapes(f"{p}dw.bn", cexp))
    if spec.se_ratio:
        r = spec.se_channels
        shapes[f"{p}se.reduce.weight"] = (r, cexp, 1, 1)
        shapes[f"{p}se.reduce.bias"] = (r,)
        shapes[f"{p}se.expand.weight"] = (cexp, r, 1, 1)
        shapes[f"{p}se.expand.bias"] = (cexp,)
    shapes[f"{p}project.conv"] = (cout, cexp, 1, 1)
    shapes.update(_bn_shapes(f"{p}project.bn", cout))
    return shapes


def encoder_param_shapes(config: EncoderConfig, prefix: str = "encoder") -> dict[str, tuple]:
    shapes = {f"{prefix}.stem.conv": (config.stem_channels, config.in_channels,
                                      config.stem_kernel, config.stem_kernel)}
    shapes.update(_bn_shapes(f"{prefix}.stem.bn", config.stem_channels))
    for i, blk in enumerate(config.instances()):
        shapes.update(block_param_shapes(blk, f"{prefix}.blocks.{i}"))
    return shapes


def is_trainable(name: str) -> bool:
    """BN running statistics are buffers, not parameters."""
    return not (name.endswith(".mean") or name.endswith(".var"))


def count_params(shapes: Mapping[str, tuple]) -> int:
    return sum(int(np.prod(s)) for n, s in shapes.items() if is_trainable(n))


def parameter_count(config: EncoderConfig) -> int:
    """Conv kernels, SE biases and BN scale/shift of the whole encoder."""
    return count_params(encoder_param_shapes(config))


# ------------------------------------------------------------------- forward

def _sub(weights: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    p = prefix + "."
    return {k[len(p):]: v for k, v in weights.items() if k.startswith(p)}


def _bn(x, w, prefix, eps=BN_EPS):
    return batchnorm_infer(x, eps=eps, **{f: w[f"{prefix}.{f}"] for f in BN_FIELDS})


def mbconv_body(x: np.ndarray, spec: BlockSpec, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """MBConv without the skip connection.

    expand (1x1) -> BN -> swish -> depthwise -> BN -> swish -> SE gate
    -> project (1x1) -> BN, with a linear final activation.
    """
    x = as_tensor(x)
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"MBConv expects {spec.in_channels} input channels, got {x.shape[1]}")
    h = x
    if spec.expansion_ratio != 1:
        h = conv2d(h, ConvWeights(weights["expand.conv"]))
        h = activate(_bn(h, weights, "expand.bn"), "swish")
    k = spec.kernel_size
    h = depthwise_conv2d(h, ConvWeights(weights["dw.conv"], stride=spec.stride,
                                        padding=k // 2, groups=spec.expanded_channels))
    h = activate(_bn(h, weights, "dw.bn"), "swish")
    if spec.se_ratio:
        s = global_avg_pool(h)
        s = conv2d(s, ConvWeights(weights["se.reduce.weight"], weights["se.reduce.bias"]))
        s = activate(s, "swish")
        s = conv2d(s, ConvWeights(weights["se.expand.weight"], weights["se.expand.bias"]))
        h = h * activate(s, "sigmoid")
    h = conv2d(h, ConvWeights(weights["project.conv"]))
    return activate(_bn(h, weights, "project.bn"), "linear")


def mbconv_forward(x: np.ndarray, spec: BlockSpec, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    body = mbconv_body(x, spec, weights)
    return x + body if spec.has_residual else body


def encoder_forward(x: np.ndarray, config: EncoderConfig,
                    weights: Mapping[str, np.ndarray], prefix: str = "encoder") -> list[np.ndarray]:
    """Run the encoder and return the five skip features, shallowest first."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 32 or w % 32:
        raise ShapeError(f"encoder input height and width must be multiples of 32, got {(h, w)}")
    if c != config.in_channels:
        raise ShapeError(f"encoder expects {config.in_channels} input channels, got {c}")
    enc = _sub(weights, prefix)
    k = config.stem_kernel
    x = conv2d(x, ConvWeights(enc["stem.conv"], stride=config.stem_stride, padding=k // 2))
    x = activate(_bn(x, enc, "stem.bn"), "swish")
    taps = set(config.tap_indices())
    features = []
    for i, blk in enumerate(config.instances()):
        x = mbconv_forward(x, blk, _sub(enc, f"blocks.{i}"))
        if i in taps:
            features.append(x)
    return features


def describe(config: EncoderConfig) -> dict:
    """JSON-ready summary of a configuration."""
    return {
        "variant": config.variant,
        "stem": {"kernel": config.stem_kernel, "stride": config.stem_stride,
                 "out_channels": config.stem_channels},
        "blocks": [
            {"expansion_ratio": b.expansion_ratio, "kernel_size": b.kernel_size,
             "stride": b.stride, "in_channels": b.in_channels,
             "out_channels": b.out_channels, "repeats": b.repeats, "se_ratio": b.se_ratio}
            for b in config.blocks
        ],
        "tap_channels": list(config.tap_channels),
        "parameter_count": parameter_count(config),
    }
