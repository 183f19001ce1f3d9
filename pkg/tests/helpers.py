"""Shared oracles for the test suite."""

import numpy as np

from gateseed.nn import Architecture

FD_EPS = 1e-3
# An 8x8 single-channel input and two conv layers; the second keeps 4x4.
REDUCED = Architecture(input_hw=(8, 8), channels=(3, 3), pooled=(True, False), grid=(4, 3, 5))


def numeric_grad(f, x, eps=FD_EPS):
    """Central differences of the scalar ``f()`` w.r.t. array ``x`` (mutated, then restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def activation_pattern(cache):
    """ReLU masks and max-pool routes of a train-mode pass, as one bool vector."""
    bits = []
    for _, _, relu_mask, pool in cache["layers"]:
        bits.append(relu_mask.ravel())
        if pool is not None:
            bits.extend(m.ravel() for m in pool[1])
    return np.concatenate(bits)


def network_grad_check(params, x, target, mask, w, eps=FD_EPS, small_eps=1e-6):
    """Compare backprop with central differences for every trainable tensor.

    A coordinate whose +-eps step flips a ReLU or max-pool decision straddles
    a kink, where a difference quotient of width 2*eps is not a derivative;
    those coordinates are re-measured with ``small_eps``. Returns
    ``(max_rel_err_smooth, max_rel_err_kinked, n_kinked, n_total)``.
    """
    from gateseed import nn

    pred, cache = nn.forward(params, x, "train")
    base = activation_pattern(cache)
    grads = nn.backward(params, cache, nn.loss_gradient(pred, target, mask, w))

    def loss_and_pattern():
        out, c = nn.forward(params, x, "train")
        return nn.compute_loss(out, target, mask, w).total, activation_pattern(c)

    smooth, kinked, n_kinked, total = 0.0, 0.0, 0, 0
    for name, arr in params.weights.items():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + eps
            fp, pp = loss_and_pattern()
            arr[i] = old - eps
            fm, pm = loss_and_pattern()
            arr[i] = old
            a = grads[name][i]
            total += 1
            if np.array_equal(pp, base) and np.array_equal(pm, base):
                smooth = max(smooth, rel_error(a, (fp - fm) / (2 * eps)))
                continue
            n_kinked += 1
            arr[i] = old + small_eps
            fp, _ = loss_and_pattern()
            arr[i] = old - small_eps
            fm, _ = loss_and_pattern()
            arr[i] = old
            kinked = max(kinked, rel_error(a, (fp - fm) / (2 * small_eps)))
    return smooth, kinked, n_kinked, total


def rel_error(analytic, numeric, floor=1e-6):
    """Max elementwise relative error; ``floor`` keeps exact zeros from dividing by 0."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def naive_mae(preds, targets, masks, conf_thresh, d_max):
    """Loop-by-loop MAE over occupied, detected cells."""
    ec = ed = et = 0.0
    count = 0
    for p, t, m in zip(preds, targets, masks):
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                if not m[i, j] or p[i, j, 4] < conf_thresh:
                    continue
                count += 1
                ec += abs(p[i, j, 0] - t[i, j, 0]) + abs(p[i, j, 1] - t[i, j, 1])
                ed += abs(min(max(p[i, j, 2], 0.0), 1.0) - t[i, j, 2]) * d_max
                et += abs(p[i, j, 3] - t[i, j, 3]) * np.pi / 2
    if count == 0:
        return 0.0, 0.0, 0.0
    return ec / count, ed / count, et / count


def naive_fn_rate(preds, masks, conf_thresh):
    occ = missed = 0
    for p, m in zip(preds, masks):
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                if m[i, j]:
                    occ += 1
                    missed += p[i, j, 4] < conf_thresh
    return 0.0 if occ == 0 else 100.0 * missed / occ


def random_eval_case(rng, n=None):
    n = n or int(rng.integers(1, 6))
    preds = rng.uniform(-0.2, 1.2, (n, 4, 3, 5))
    targets = rng.uniform(0, 1, (n, 4, 3, 5))
    targets[..., 3] = rng.uniform(-1, 1, (n, 4, 3))
    masks = rng.random((n, 4, 3)) < 0.3
    return preds, targets, masks
