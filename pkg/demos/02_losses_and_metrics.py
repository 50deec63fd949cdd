"""
Losses, gradients and precision/recall
======================================

The training loss mixes cross-entropy and soft Dice 0.7 / 0.3. Both come
with analytic gradients; here they are compared with finite differences,
and a small score/label set is turned into a PR curve.
"""
import numpy as np

from cloudseg.metrics import categorical_cross_entropy, combined_loss, dice_coefficient, pr_curve
from cloudseg.tensor import softmax_channels

rng = np.random.default_rng(0)

# Dice of two overlapping squares: 2 * 16 / (36 + 36)
a = np.zeros((10, 10), bool)
b = np.zeros((10, 10), bool)
a[0:6, 0:6] = True
b[2:8, 2:8] = True
print("dice:", dice_coefficient(a, b), "expected", 2 * 16 / 72)

# Uniform probabilities give cross-entropy ln 4 on any one-hot target.
logits = np.zeros((1, 4, 5, 5))
target = np.moveaxis(np.eye(4)[rng.integers(0, 4, (1, 5, 5))], -1, 1)
ce, _ = categorical_cross_entropy(softmax_channels(logits), target)
print("cross-entropy at uniform logits:", round(ce, 6), " ln 4 =", round(np.log(4), 6))

# Analytic gradient against central differences.
z = rng.standard_normal((1, 4, 3, 3))
loss, grad = combined_loss(z, target[:, :, :3, :3])
num = np.zeros_like(z)
h = 1e-5
for idx in np.ndindex(z.shape):
    zp, zm = z.copy(), z.copy()
    zp[idx] += h
    zm[idx] -= h
    num[idx] = (combined_loss(zp, target[:, :, :3, :3])[0] - combined_loss(zm, target[:, :, :3, :3])[0]) / (2 * h)
print("relative gradient error:", np.linalg.norm(grad - num) / np.linalg.norm(num))

# Plain gradient descent on the logits drive the loss down.
for step in range(200):
    loss, grad = combined_loss(z, target[:, :, :3, :3])
    z -= 5.0 * grad
print("loss after plain descent:", round(loss, 4))
print("predicted classes match target:",
      np.array_equal(softmax_channels(z).argmax(1), target[:, :, :3, :3].argmax(1)))

# Precision/recall: one point per distinct score, highest first.
scores = np.array([0.95, 0.9, 0.85, 0.8, 0.7, 0.7, 0.6, 0.4, 0.3, 0.1])
labels = np.array([1, 0, 1, 1, 0, 1, 0, 1, 0, 0])
curve = pr_curve(scores, labels)
for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
    print(f"  t={t:.2f}  precision={p:.3f}  recall={r:.3f}")
print("AUC:", round(curve.auc, 4))
