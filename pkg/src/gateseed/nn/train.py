from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .loss import LossWeights, compute_loss, loss_gradient
from .network import NetworkParams, backward, forward, update_running_stats
from .optim import adam_step, lr_at_epoch

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    xy: float
    d: float
    theta: float
    c: float

    def as_row(self) -> dict:
        return dict(self.__dict__)


def train(dataset, params: NetworkParams, w: LossWeights = LossWeights(), epochs: int = 10,
          batch_size: int = 32, seed: int = 0, lr_fn=lr_at_epoch, progress=None):
    """Mini-batch Adam training.

    ``dataset`` is ``(inputs, targets, masks)`` with inputs (N, H, W) in
    [0, 1], targets (N, R, C, 5) and masks (N, R, C). ``params`` is updated
    in place and returned together with one :class:`EpochLog` per epoch.
    """
    x, t, m = dataset
    n = len(x)
    if n == 0:
        raise TrainingError("dataset is empty")
    if not (len(t) == len(m) == n):
        raise TrainingError("inputs, targets and masks differ in length")
    rng = np.random.default_rng(seed)
    history: list[EpochLog] = []
    for epoch in range(epochs):
        lr = lr_fn(epoch)
        order = rng.permutation(n)
        sums = np.zeros(5)
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start : start + batch_size]
            xb = x[idx]
            pred, cache = forward(params, xb, "train")
            terms = compute_loss(pred, t[idx], m[idx], w)
            if not np.isfinite(terms.total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {terms.as_dict()}")
            grads = backward(params, cache, loss_gradient(pred, t[idx], m[idx], w))
            adam_step(params, grads, lr)
            update_running_stats(params, cache)
            sums += len(idx) * np.array([terms.total, terms.xy, terms.d, terms.theta, terms.c])
        mean = sums / n
        entry = EpochLog(epoch, lr, *map(float, mean))
        history.append(entry)
        log.info("epoch %d lr %.4g loss %.5f (xy %.5f d %.5f theta %.5f c %.5f)", epoch, lr, *mean)
        if progress is not None:
            progress(entry)
    return params, history
