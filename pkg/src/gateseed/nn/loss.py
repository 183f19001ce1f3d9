from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

X, Y, D, THETA, CONF = range(5)


@dataclass(frozen=True)
class LossWeights:
    xy: float = 1.0
    d: float = 1.0
    theta: float = 1.0
    c: float = 1.0
    alpha: float = 0.5  # confidence weight on cells without a gate

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {v}")
        if self.alpha > 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    xy: float
    d: float
    theta: float
    c: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check(pred, target, mask):
    pred = np.asarray(pred)
    target = np.asarray(target)
    mask = np.asarray(mask)
    if pred.shape != target.shape or pred.shape[:-1] != mask.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    return pred, target, mask


def compute_loss(pred, target, mask, w: LossWeights = LossWeights()) -> LossBreakdown:
    """Weighted sum of the four grid losses.

    Position, distance and orientation errors count only on occupied cells;
    confidence error counts everywhere, with weight ``alpha`` on empty cells.
    A leading batch axis is averaged over.
    """
    pred, target, mask = _check(pred, target, mask)
    m = mask.astype(np.float64)
    diff = pred.astype(np.float64) - target.astype(np.float64)
    axes = (-2, -1)
    l_xy = (m * (diff[..., X] ** 2 + diff[..., Y] ** 2)).sum(axis=axes)
    l_d = (m * diff[..., D] ** 2).sum(axis=axes)
    l_t = (m * diff[..., THETA] ** 2).sum(axis=axes)
    l_c = ((m + w.alpha * (1.0 - m)) * diff[..., CONF] ** 2).sum(axis=axes)
    terms = [float(np.mean(t)) for t in (l_xy, l_d, l_t, l_c)]
    total = w.xy * terms[0] + w.d * terms[1] + w.theta * terms[2] + w.c * terms[3]
    return LossBreakdown(total, *terms)


def loss_gradient(pred, target, mask, w: LossWeights = LossWeights()) -> np.ndarray:
    """d(total)/d(pred), same shape as ``pred``; batch mean matches compute_loss."""
    pred, target, mask = _check(pred, target, mask)
    n = pred.shape[0] if pred.ndim == 4 else 1
    m = mask.astype(pred.dtype)
    diff = pred - target.astype(pred.dtype)
    g = np.empty_like(pred)
    g[..., X] = 2.0 * w.xy * m * diff[..., X]
    g[..., Y] = 2.0 * w.xy * m * diff[..., Y]
    g[..., D] = 2.0 * w.d * m * diff[..., D]
    g[..., THETA] = 2.0 * w.theta * m * diff[..., THETA]
    g[..., CONF] = 2.0 * w.c * (m + w.alpha * (1.0 - m)) * diff[..., CONF]
    return g / n
