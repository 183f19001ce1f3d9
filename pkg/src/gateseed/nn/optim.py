from __future__ import annotations

import numpy as np

from .network import NetworkParams

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8

BASE_LR = 0.01
LR_DECAY = 0.1
LR_MILESTONES = (5, 8)


def lr_at_epoch(epoch: int, base_lr: float = BASE_LR, decay: float = LR_DECAY, milestones=LR_MILESTONES) -> float:
    """Step schedule: multiply by ``decay`` at each milestone epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    lr = base_lr
    for m in milestones:
        if epoch >= m:
            lr *= decay
    return lr


def adam_step(params: NetworkParams, grads: dict[str, np.ndarray], lr: float,
              beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS) -> NetworkParams:
    """Bias-corrected Adam, in place on ``params``; returns it for chaining."""
    if set(grads) != set(params.weights):
        raise ValueError(f"gradient keys differ from parameters: {sorted(set(grads) ^ set(params.weights))}")
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.weights.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = params.adam_m.setdefault(name, np.zeros_like(p))
        v = params.adam_v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params
