"""
Dense NCHW tensor operators
===========================

Every feature map in the network is a plain ``numpy.ndarray`` of shape
``(n, c, h, w)`` stored as float32 in C order (n-major, then c, h, w).
Reductions inside convolutions and pooling accumulate in float64 and are
cast back to float32 on output, so results are deterministic and stay
close to naive loop references.

Convolutions use the cross-correlation convention (no kernel flip), the
same as every mainstream framework, so exported weights load unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

__all__ = [
    "ShapeError",
    "ConvWeights",
    "as_tensor",
    "conv2d",
    "depthwise_conv2d",
    "batchnorm_infer",
    "activate",
    "global_avg_pool",
    "bilinear_upsample2x",
    "resize_bilinear",
    "concat_channels",
    "softmax_channels",
    "softmax_backward",
]

# Upper bound on float64 elements materialised per convolution tile (~64 MB).
_TILE_ELEMENTS = 8_000_000


class ShapeError(ValueError):
    """Raised when tensor dimensions are incompatible with an operation."""


def as_tensor(x, dtype=np.float32) -> np.ndarray:
    """Validate ``x`` as a rank-4 NCHW tensor and return it as ``dtype``."""
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise ShapeError(f"expected rank-4 (n, c, h, w) tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"every tensor dim must be >= 1, got {arr.shape}")
    return np.ascontiguousarray(arr, dtype=dtype)


@dataclass(frozen=True)
class ConvWeights:
    """Kernel of shape (out, in_per_group, kh, kw) plus conv hyper-parameters."""

    kernel: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        k = np.asarray(self.kernel)
        if k.ndim != 4:
            raise ShapeError(f"kernel must be rank 4 (out, in/groups, kh, kw), got {k.shape}")
        if self.stride < 1 or self.padding < 0 or self.groups < 1:
            raise ShapeError(
                f"invalid stride/padding/groups ({self.stride}, {self.padding}, {self.groups})"
            )
        if k.shape[0] % self.groups:
            raise ShapeError(f"out_channels {k.shape[0]} not divisible by groups {self.groups}")
        if self.bias is not None and np.shape(self.bias) != (k.shape[0],):
            raise ShapeError(f"bias shape {np.shape(self.bias)} != ({k.shape[0]},)")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1] * self.groups


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _row_tile(n: int, per_row: int) -> int:
    return max(1, _TILE_ELEMENTS // max(1, n * per_row))


def conv2d(x: np.ndarray, weights: ConvWeights) -> np.ndarray:
    """2-D cross-correlation with optional groups, stride and zero padding.

    Output shape is ``(n, out, (h + 2p - kh) // s + 1, (w + 2p - kw) // s + 1)``.
    Depthwise kernels (one input channel per group) take an elementwise
    path; everything else is tiled im2col followed by a float64 matmul.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    kernel = np.asarray(weights.kernel, dtype=np.float64)
    out_c, cpg, kh, kw = kernel.shape
    s, p, g = weights.stride, weights.padding, weights.groups
    if c != g * cpg:
        raise ShapeError(
            f"input has {c} channels but weights expect groups*in_per_group = {g}*{cpg} = {g * cpg}"
        )
    if h + 2 * p < kh or w + 2 * p < kw:
        raise ShapeError(f"padded input {(h + 2 * p, w + 2 * p)} smaller than kernel {(kh, kw)}")
    ho, wo = _out_size(h, kh, s, p), _out_size(w, kw, s, p)

    # bias joins the float64 accumulator so each output is rounded to float32 once
    bias = np.zeros(out_c) if weights.bias is None else np.asarray(weights.bias, dtype=np.float64)
    if cpg == 1 and g == c == out_c:
        return _depthwise(x, kernel, bias, s, p, ho, wo)
    if kh == kw == 1 and p == 0:
        return _pointwise(x[:, :, ::s, ::s], kernel, bias, g)
    return _im2col_conv(x, kernel, bias, s, p, g, ho, wo)


def _pointwise(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, groups: int) -> np.ndarray:
    n, c, h, w = x.shape
    out_c = kernel.shape[0]
    cpg, opg = c // groups, out_c // groups
    out = np.empty((n, out_c, h, w), dtype=np.float32)
    rows = _row_tile(n, w * max(c, out_c))
    for gi in range(groups):
        wmat = kernel[gi * opg:(gi + 1) * opg, :, 0, 0]
        for r0 in range(0, h, rows):
            tile = x[:, gi * cpg:(gi + 1) * cpg, r0:r0 + rows].astype(np.float64)
            res = np.einsum("oc,nchw->nohw", wmat, tile, optimize=True)
            res += bias[gi * opg:(gi + 1) * opg, None, None]
            out[:, gi * opg:(gi + 1) * opg, r0:r0 + rows] = res
    return out


def _im2col_conv(x, kernel, bias, s, p, groups, ho, wo) -> np.ndarray:
    n, c, h, w = x.shape
    out_c, cpg, kh, kw = kernel.shape
    opg = out_c // groups
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    # windows: (n, c, ho', wo', kh, kw) view, strided to the output grid
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    out = np.empty((n, out_c, ho, wo), dtype=np.float32)
    rows = _row_tile(n, wo * cpg * kh * kw)
    for gi in range(groups):
        wmat = kernel[gi * opg:(gi + 1) * opg].reshape(opg, -1)
        for r0 in range(0, ho, rows):
            r1 = min(ho, r0 + rows)
            patch = win[:, gi * cpg:(gi + 1) * cpg, r0:r1]
            cols = patch.transpose(0, 2, 3, 1, 4, 5).reshape(-1, cpg * kh * kw)
            res = cols.astype(np.float64) @ wmat.T + bias[gi * opg:(gi + 1) * opg]
            out[:, gi * opg:(gi + 1) * opg, r0:r1] = (
                res.reshape(n, r1 - r0, wo, opg).transpose(0, 3, 1, 2)
            )
    return out


def _depthwise(x, kernel, bias, s, p, ho, wo) -> np.ndarray:
    n, c, h, w = x.shape
    _, _, kh, kw = kernel.shape
    out = np.empty((n, c, ho, wo), dtype=np.float32)
    chunk = max(1, _TILE_ELEMENTS // max(1, n * (h + 2 * p) * (w + 2 * p)))
    for c0 in range(0, c, chunk):
        c1 = min(c, c0 + chunk)
        xp = x[:, c0:c1].astype(np.float64)
        if p:
            xp = np.pad(xp, ((0, 0), (0, 0), (p, p), (p, p)))
        acc = np.broadcast_to(bias[None, c0:c1, None, None], (n, c1 - c0, ho, wo)).copy()
        for i in range(kh):
            for j in range(kw):
                tap = xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
                acc += tap * kernel[c0:c1, 0, i, j][None, :, None, None]
        out[:, c0:c1] = acc
    return out


def depthwise_conv2d(x: np.ndarray, weights: ConvWeights) -> np.ndarray:
    """Per-channel spatial convolution; requires ``groups == channels == out``."""
    x = as_tensor(x)
    c = x.shape[1]
    if weights.groups != c or weights.out_channels != c or weights.kernel.shape[1] != 1:
        raise ShapeError(
            f"depthwise conv needs groups == in == out channels == {c}; got groups="
            f"{weights.groups}, kernel {tuple(weights.kernel.shape)}"
        )
    return conv2d(x, weights)


def batchnorm_infer(x, mean, var, gamma, beta, eps: float = 1e-3) -> np.ndarray:
    """Inference-mode batch norm: ``gamma * (x - mean) / sqrt(var + eps) + beta``."""
    x = np.asarray(x)
    c = x.shape[1]
    vecs = [np.asarray(v, dtype=np.float64) for v in (mean, var, gamma, beta)]
    for name, v in zip(("mean", "var", "gamma", "beta"), vecs):
        if v.shape != (c,):
            raise ShapeError(f"batchnorm {name} has shape {v.shape}, expected ({c},)")
    mean, var, gamma, beta = vecs
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    dtype = x.dtype if x.dtype.kind == "f" else np.float32
    out = x * scale.astype(dtype)[None, :, None, None] + shift.astype(dtype)[None, :, None, None]
    return out.astype(dtype, copy=False)


def activate(x, kind: str) -> np.ndarray:
    """Elementwise activation: ``relu``, ``swish``, ``sigmoid`` or ``linear``."""
    x = np.asarray(x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return expit(x)
    if kind == "swish":
        return x * expit(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def global_avg_pool(x) -> np.ndarray:
    """Spatial mean per (n, c), returned with shape (n, c, 1, 1)."""
    x = np.asarray(x)
    return x.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(np.float32)


def _axis_lerp(size_in: int, size_out: int):
    # half-pixel centres, source coordinate clamped to [0, size_in - 1]
    src = (np.arange(size_out) + 0.5) * (size_in / size_out) - 0.5
    src = np.clip(src, 0, size_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, size_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(x, size) -> np.ndarray:
    """Bilinear resize of the last two axes to ``size`` (half-pixel centres, edge clamp)."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    oh, ow = size
    if oh < 1 or ow < 1:
        raise ShapeError(f"target size must be positive, got {size}")
    dtype = x.dtype if x.dtype.kind == "f" else np.float32
    out = x.astype(dtype, copy=False)
    if oh != h:
        lo, hi, f = _axis_lerp(h, oh)
        f = f.astype(dtype)[:, None]
        out = out[..., lo, :] * (1 - f) + out[..., hi, :] * f
    if ow != w:
        lo, hi, f = _axis_lerp(w, ow)
        f = f.astype(dtype)
        out = out[..., lo] * (1 - f) + out[..., hi] * f
    return np.ascontiguousarray(out)


def bilinear_upsample2x(x) -> np.ndarray:
    """Double height and width by bilinear interpolation."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    return resize_bilinear(x, (2 * h, 2 * w))


def concat_channels(a, b) -> np.ndarray:
    """Stack ``b``'s channels after ``a``'s. Either input may have zero channels."""
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat needs rank-4 tensors, got {a.shape} and {b.shape}")
    if (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ShapeError(f"concat needs matching n, h, w; got {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def softmax_channels(x) -> np.ndarray:
    """Softmax over axis 1 with max subtraction."""
    x = np.asarray(x)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs, grad_probs) -> np.ndarray:
    """Pull a gradient w.r.t. softmax probabilities back to the logits."""
    probs = np.asarray(probs)
    grad_probs = np.asarray(grad_probs)
    inner = (probs * grad_probs).sum(axis=1, keepdims=True)
    return probs * (grad_probs - inner)
