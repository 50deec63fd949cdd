"""Rectified Adam and desk-scale training of the 1x1 segmentation head."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import LossWeights, combined_loss, mean_dice
from .tensor import softmax_channels


@dataclass(frozen=True)
class RAdamHyperparams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1): {self}")
        if self.lr < 0 or self.eps <= 0:
            raise ValueError(f"lr must be >= 0 and eps > 0: {self}")

    @property
    def rho_inf(self) -> float:
        return 2.0 / (1.0 - self.beta2) - 1.0


@dataclass
class RAdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "RAdamState":
        return cls(np.zeros(n), np.zeros(n))


def rho(t: int, beta2: float = 0.999) -> float:
    """Length of the approximated simple moving average after ``t`` steps."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2 ** t
    return rho_inf - 2.0 * t * b2t / (1.0 - b2t)


def rectification(t: int, beta2: float = 0.999) -> float:
    """Variance rectification term r_t; only defined while rho_t > 4."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    rho_t = rho(t, beta2)
    if rho_t <= 4:
        raise ValueError(f"rectification undefined at t={t}: rho_t = {rho_t:.4f} <= 4")
    return math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))


def radam_step(state: RAdamState, params: np.ndarray, grads: np.ndarray,
               hp: RAdamHyperparams = RAdamHyperparams()):
    """One RAdam update. Returns ``(new_params, new_state)``; inputs are not mutated.

    While the variance estimate is untrustworthy (rho_t <= 4) the update is
    plain bias-corrected momentum.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient at parameter index {int(bad[0])}")
    t = state.t + 1
    m = hp.beta1 * state.m + (1 - hp.beta1) * grads
    v = hp.beta2 * state.v + (1 - hp.beta2) * grads * grads
    m_hat = m / (1 - hp.beta1 ** t)
    if rho(t, hp.beta2) > 4:
        r = rectification(t, hp.beta2)
        v_hat = np.sqrt(v / (1 - hp.beta2 ** t))
        new = params - hp.lr * r * m_hat / (v_hat + hp.eps)
    else:
        new = params - hp.lr * m_hat
    return new, RAdamState(m, v, t)


@dataclass
class HeadTrainingResult:
    weight: np.ndarray          # (4, F, 1, 1)
    bias: np.ndarray            # (4,)
    loss_history: list[float] = field(default_factory=list)


def head_logits(features: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    w = weight.reshape(weight.shape[0], -1)
    return np.einsum("kf,nfhw->nkhw", w, features) + bias[None, :, None, None]


def _loss_and_grads(features, targets, w, b, lw):
    logits = head_logits(features, w, b)
    loss, g = combined_loss(logits, targets, lw)
    gw = np.einsum("nkhw,nfhw->kf", g, features)
    gb = g.sum(axis=(0, 2, 3))
    return loss, gw, gb


def train_head(features, targets, hp: RAdamHyperparams = RAdamHyperparams(), epochs: int = 20,
               batch: int = 16, seed: int = 0, loss_weights: LossWeights = LossWeights(),
               init_weight=None, init_bias=None) -> HeadTrainingResult:
    """Fit a pointwise F -> 4 head on frozen features with RAdam and the combined loss.

    The head starts at zero unless ``init_weight``/``init_bias`` are given.
    Images are shuffled per epoch with ``default_rng(seed)``. The loss
    history holds the full-dataset loss before training and after each epoch.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if features.shape[0] == 0:
        raise ValueError("train_head needs at least one image")
    if features.ndim != 4 or targets.shape != (features.shape[0], targets.shape[1], *features.shape[2:]):
        raise ValueError(f"features {features.shape} and targets {targets.shape} do not align")
    n, f = features.shape[:2]
    k = targets.shape[1]
    w = np.zeros((k, f)) if init_weight is None else np.asarray(init_weight, np.float64).reshape(k, f)
    b = np.zeros(k) if init_bias is None else np.asarray(init_bias, np.float64).copy()
    rng = np.random.default_rng(seed)
    state = RAdamState.zeros(w.size + b.size)
    history = [_loss_and_grads(features, targets, w, b, loss_weights)[0]]
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            _, gw, gb = _loss_and_grads(features[idx], targets[idx], w, b, loss_weights)
            flat, state = radam_step(state, np.r_[w.ravel(), b], np.r_[gw.ravel(), gb], hp)
            w, b = flat[:w.size].reshape(k, f), flat[w.size:]
        history.append(_loss_and_grads(features, targets, w, b, loss_weights)[0])
    return HeadTrainingResult(w.reshape(k, f, 1, 1).astype(np.float32), b.astype(np.float32), history)


def head_mean_dice(features, masks, weight, bias, threshold: float = 0.5) -> float:
    """Mean Dice over every (image, class) pair of a head's thresholded softmax."""
    weight = np.asarray(weight, np.float64)
    pred = softmax_channels(head_logits(np.asarray(features, np.float64),
                                        weight.reshape(weight.shape[0], -1),
                                        np.asarray(bias, np.float64))) > threshold
    masks = np.asarray(masks, dtype=bool)
    keys = [(i, c) for i in range(masks.shape[0]) for c in range(masks.shape[1])]
    return mean_dice({k: pred[k] for k in keys}, {k: masks[k] for k in keys})
