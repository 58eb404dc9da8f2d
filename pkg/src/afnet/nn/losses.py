from __future__ import annotations

import numpy as np

from .functional import sigmoid

CLAMP = 1e-7


def weighted_bce(probs, targets, pos_weight: float = 1.0) -> float:
    """-mean(w*y*log p + (1-y)*log(1-p)) with p clamped to [1e-7, 1-1e-7]."""
    p = np.clip(np.asarray(probs, dtype=np.float64), CLAMP, 1 - CLAMP)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"probs {p.shape} and targets {y.shape} differ in shape")
    return float(-np.mean(pos_weight * y * np.log(p) + (1 - y) * np.log1p(-p)))


def weighted_bce_with_logits(logits, targets, pos_weight: float = 1.0):
    """Loss and its gradient with respect to the pre-sigmoid logits."""
    z = np.asarray(logits)
    p, _ = sigmoid(z.astype(np.float64))
    y = np.asarray(targets, dtype=np.float64).reshape(p.shape)
    loss = weighted_bce(p, y, pos_weight)
    grad = (-pos_weight * y * (1 - p) + (1 - y) * p) / p.size
    return loss, grad.astype(z.dtype)


def balanced_pos_weight(targets) -> float:
    """#negative / #positive, falling back to 1 when either class is absent."""
    y = np.asarray(targets)
    pos = int((y == 1).sum())
    neg = int((y == 0).sum())
    if pos == 0 or neg == 0:
        return 1.0
    return neg / pos
