"""Dice scoring, cross-entropy / soft-Dice losses with analytic gradients, PR curves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping

import numpy as np

from .tensor import ShapeError, softmax_backward, softmax_channels

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    cce_weight: float = 0.7
    dice_weight: float = 0.3

    def __post_init__(self):
        if not (0 <= self.cce_weight <= 1 and 0 <= self.dice_weight <= 1):
            raise ValueError(f"loss weights must lie in [0, 1], got {self}")


def dice_coefficient(pred, truth) -> float:
    """``2|X & Y| / (|X| + |Y|)`` for boolean masks; 1.0 when both are empty."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    total = int(np.count_nonzero(pred)) + int(np.count_nonzero(truth))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(pred & truth)) / total


def mean_dice(predictions: Mapping[Hashable, np.ndarray], truth: Mapping[Hashable, np.ndarray]) -> float:
    """Unweighted mean Dice over every key of ``truth``.

    A key missing from ``predictions`` scores as an empty mask; a
    prediction key absent from ``truth`` is an error.
    """
    extra = [k for k in predictions if k not in truth]
    if extra:
        raise KeyError(f"prediction key {extra[0]!r} not in the ground-truth universe")
    if not truth:
        raise ValueError("mean_dice needs at least one ground-truth pair")
    scores = []
    for key, t in truth.items():
        p = predictions.get(key)
        if p is None:
            p = np.zeros(np.shape(t), dtype=bool)
        scores.append(dice_coefficient(p, t))
    return math.fsum(scores) / len(scores)


def _check_pair(probs, target):
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape or probs.ndim != 4:
        raise ShapeError(f"probs {probs.shape} and target {target.shape} must be equal rank-4 shapes")
    return probs, target


def categorical_cross_entropy(probs, target):
    """Mean ``-sum_c y_c log p_c`` over labelled sites.

    Sites whose target is all zero (no class) are skipped. Returns the loss
    and its gradient with respect to the *logits* that produced ``probs``
    through a channel softmax: ``(p * sum_c y_c - y) / n_sites`` on
    labelled sites, which is ``(p - y) / n_sites`` for one-hot targets.
    """
    probs, target = _check_pair(probs, target)
    mass = target.sum(axis=1, keepdims=True)
    labelled = mass > 0
    n_sites = int(labelled.sum())
    if n_sites == 0:
        return 0.0, np.zeros_like(probs)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    loss = -float((target * logp).sum()) / n_sites
    grad = np.where(labelled, probs * mass - target, 0.0) / n_sites
    return loss, grad


def soft_dice_loss(probs, target, smooth: float = 1.0):
    """Per-class ``1 - (2 sum p y + s) / (sum p + sum y + s)``, averaged over classes.

    Sums run over batch and pixels. Returns the loss and its gradient with
    respect to ``probs``.
    """
    probs, target = _check_pair(probs, target)
    axes = (0, 2, 3)
    inter = (probs * target).sum(axis=axes)
    denom = probs.sum(axis=axes) + target.sum(axis=axes) + smooth
    numer = 2.0 * inter + smooth
    n_classes = probs.shape[1]
    loss = float(np.mean(1.0 - numer / denom))
    # d/dp of -(numer/denom) via the quotient rule
    g = -(2.0 * target * denom[None, :, None, None] - numer[None, :, None, None]) / (
        denom[None, :, None, None] ** 2
    )
    return loss, g / n_classes


def combined_loss(logits, target, weights: LossWeights = LossWeights(), smooth: float = 1.0):
    """``0.7 * CCE + 0.3 * soft-Dice`` on softmax(logits), with gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    probs = softmax_channels(logits)
    cce, g_cce = categorical_cross_entropy(probs, target)
    dice, g_dice_p = soft_dice_loss(probs, target, smooth)
    g_dice = softmax_backward(probs, g_dice_p)
    loss = weights.cce_weight * cce + weights.dice_weight * dice
    return loss, weights.cce_weight * g_cce + weights.dice_weight * g_dice


@dataclass(frozen=True)
class PrCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc: float


def pr_curve(scores, labels) -> PrCurve:
    """Precision/recall at every distinct score, highest threshold first.

    A pixel is predicted positive when ``score >= threshold``. The area is
    the trapezoid rule over recall, anchored at (recall 0, precision 1).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} differ")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("pr_curve needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of equal scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    r = np.r_[0.0, recall]
    p = np.r_[1.0, precision]
    auc = math.fsum(((r[1:] - r[:-1]) * (p[1:] + p[:-1]) / 2).tolist())
    return PrCurve(s[last], precision, recall, auc)
