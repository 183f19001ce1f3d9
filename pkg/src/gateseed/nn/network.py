"""The grid-regression backbone: N x (conv3x3 -> BN -> ReLU [-> maxpool]) ->
flatten -> dense -> R x C x F grid with per-channel output heads."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


@dataclass(frozen=True)
class Architecture:
    input_hw: tuple[int, int] = (120, 160)
    in_channels: int = 1
    channels: tuple[int, ...] = (16, 16, 16, 16, 16, 16)
    kernel: int = 3
    pooled: tuple[bool, ...] = (True, True, True, True, True, False)
    grid: tuple[int, int, int] = (4, 3, 5)

    def __post_init__(self):
        if len(self.channels) != len(self.pooled):
            raise ValueError("channels and pooled must have one entry per conv layer")

    @property
    def n_conv(self) -> int:
        return len(self.channels)

    def feature_shape(self) -> tuple[int, int, int]:
        """(C, H, W) of the last conv activation before flattening."""
        h, w = self.input_hw
        for p in self.pooled:
            if p:
                h, w = h // 2, w // 2
        return (self.channels[-1], h, w)

    @property
    def flat_size(self) -> int:
        c, h, w = self.feature_shape()
        return c * h * w

    @property
    def out_size(self) -> int:
        r, c, f = self.grid
        return r * c * f

    def digest(self) -> bytes:
        """SHA-256 over a canonical description; guards checkpoints."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            input_hw=tuple(d["input_hw"]),
            in_channels=int(d["in_channels"]),
            channels=tuple(d["channels"]),
            kernel=int(d["kernel"]),
            pooled=tuple(bool(p) for p in d["pooled"]),
            grid=tuple(d["grid"]),
        )


PENCILNET = Architecture()


@dataclass
class NetworkParams:
    """Trainable tensors, batch-norm running statistics and Adam state."""

    arch: Architecture
    weights: dict[str, np.ndarray]
    running: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.arch,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.running.items()},
            {k: v.copy() for k, v in self.adam_m.items()},
            {k: v.copy() for k, v in self.adam_v.items()},
            self.step,
        )

    def astype(self, dtype) -> "NetworkParams":
        out = self.copy()
        for d in (out.weights, out.running, out.adam_m, out.adam_v):
            for k in d:
                d[k] = d[k].astype(dtype)
        return out

    @property
    def dtype(self):
        return self.weights["dense.w"].dtype

    def n_trainable(self) -> int:
        return int(sum(v.size for v in self.weights.values()))


def init_params(arch: Architecture = PENCILNET, seed: int = 0, dtype=np.float32) -> NetworkParams:
    """Kaiming-uniform (fan-in) weights, zero biases, BN scale 1 / shift 0."""
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    running: dict[str, np.ndarray] = {}
    cin = arch.in_channels
    k = arch.kernel
    for i, cout in enumerate(arch.channels):
        fan_in = cin * k * k
        bound = np.sqrt(6.0 / fan_in)
        weights[f"conv{i}.w"] = rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype)
        weights[f"conv{i}.b"] = np.zeros(cout, dtype=dtype)
        weights[f"bn{i}.gamma"] = np.ones(cout, dtype=dtype)
        weights[f"bn{i}.beta"] = np.zeros(cout, dtype=dtype)
        running[f"bn{i}.mean"] = np.zeros(cout, dtype=dtype)
        running[f"bn{i}.var"] = np.ones(cout, dtype=dtype)
        cin = cout
    # linear output layer: unit gain
    bound = np.sqrt(3.0 / arch.flat_size)
    weights["dense.w"] = rng.uniform(-bound, bound, (arch.out_size, arch.flat_size)).astype(dtype)
    weights["dense.b"] = np.zeros(arch.out_size, dtype=dtype)
    return NetworkParams(arch, weights, running)


def _as_batch(x: np.ndarray, arch: Architecture) -> np.ndarray:
    h, w = arch.input_hw
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None, :, :, None]
    elif x.ndim == 3:
        if x.shape == (arch.in_channels, h, w):
            x = np.moveaxis(x, 0, -1)[None]
        else:
            x = x[..., None]
    elif x.ndim == 4 and x.shape[1] == arch.in_channels and x.shape[-1] != arch.in_channels:
        x = np.moveaxis(x, 1, -1)
    if x.ndim != 4 or x.shape[1:] != (h, w, arch.in_channels):
        raise ShapeError(f"expected input of shape (N, {h}, {w}) or (N, {arch.in_channels}, {h}, {w}), got {np.shape(x)}")
    return x


def forward(params: NetworkParams, x: np.ndarray, mode: str = "infer"):
    """Run the network.

    ``x`` is (N, H, W), (N, 1, H, W), (1, H, W) or (H, W), values in [0, 1].
    Returns ``(pred, cache)`` with ``pred`` of shape (N, R, C, F); ``cache``
    is ``None`` in infer mode.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    arch = params.arch
    train = mode == "train"
    w = params.weights
    h = _as_batch(x, arch).astype(params.dtype, copy=False)
    caches = []
    for i in range(arch.n_conv):
        h, c_conv = L.conv2d_forward(h, w[f"conv{i}.w"], w[f"conv{i}.b"])
        h, c_bn = L.batchnorm_forward(
            h, w[f"bn{i}.gamma"], w[f"bn{i}.beta"],
            params.running[f"bn{i}.mean"], params.running[f"bn{i}.var"], train, BN_EPS,
        )
        h, c_relu = L.relu_forward(h)
        c_pool = None
        if arch.pooled[i]:
            h, c_pool = L.maxpool2_forward(h)
        caches.append((c_conv, c_bn, c_relu, c_pool) if train else None)
    n = h.shape[0]
    feat = np.ascontiguousarray(h.transpose(0, 3, 1, 2))  # (N, C, H, W)
    if feat.shape[1:] != arch.feature_shape():
        raise ShapeError(f"feature map {feat.shape[1:]} != expected {arch.feature_shape()}")
    z, c_dense = L.dense_forward(feat.reshape(n, -1), w["dense.w"], w["dense.b"])
    z = z.reshape((n,) + arch.grid)
    pred, act = L.heads_forward(z)
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError("non-finite value in network output")
    if not train:
        return pred, None
    return pred, {"layers": caches, "dense": c_dense, "heads": act, "feat_shape": feat.shape}


def feature_map(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Activation right before flattening, (N, C, H, W), infer mode."""
    arch = params.arch
    w = params.weights
    h = _as_batch(x, arch).astype(params.dtype, copy=False)
    for i in range(arch.n_conv):
        h, _ = L.conv2d_forward(h, w[f"conv{i}.w"], w[f"conv{i}.b"])
        h, _ = L.batchnorm_forward(
            h, w[f"bn{i}.gamma"], w[f"bn{i}.beta"],
            params.running[f"bn{i}.mean"], params.running[f"bn{i}.var"], False, BN_EPS,
        )
        h, _ = L.relu_forward(h)
        if arch.pooled[i]:
            h, _ = L.maxpool2_forward(h)
    return h.transpose(0, 3, 1, 2)


def backward(params: NetworkParams, cache, dpred: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every trainable tensor given dL/dpred (N, R, C, F)."""
    if cache is None:
        raise StateError("backward needs the cache of a train-mode forward pass")
    arch = params.arch
    w = params.weights
    grads: dict[str, np.ndarray] = {}
    dz = L.heads_backward(np.asarray(dpred, dtype=params.dtype), cache["heads"])
    n = dz.shape[0]
    dflat, grads["dense.w"], grads["dense.b"] = L.dense_backward(dz.reshape(n, -1), cache["dense"])
    dh = dflat.reshape(cache["feat_shape"]).transpose(0, 2, 3, 1)
    for i in reversed(range(arch.n_conv)):
        c_conv, c_bn, c_relu, c_pool = cache["layers"][i]
        if c_pool is not None:
            dh = L.maxpool2_backward(dh, c_pool)
        dh = L.relu_backward(dh, c_relu)
        dh, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = L.batchnorm_backward(dh, c_bn)
        dh, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = L.conv2d_backward(dh, c_conv, need_dx=i > 0)
    return {k: grads[k].astype(w[k].dtype, copy=False) for k in w}


def update_running_stats(params: NetworkParams, cache, momentum: float = BN_MOMENTUM) -> None:
    """Blend the batch statistics of a train-mode pass into the running ones."""
    if cache is None:
        raise StateError("no train-mode cache to take batch statistics from")
    for i, layer in enumerate(cache["layers"]):
        _, mean, var = layer[1][2:]
        rm, rv = params.running[f"bn{i}.mean"], params.running[f"bn{i}.var"]
        rm *= momentum
        rm += (1.0 - momentum) * mean.astype(rm.dtype)
        rv *= momentum
        rv += (1.0 - momentum) * var.astype(rv.dtype)


def predict(params: NetworkParams, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Infer-mode forward over a large batch in chunks."""
    x = np.asarray(x)
    if x.ndim == 2:
        return forward(params, x, "infer")[0]
    outs = [forward(params, x[i : i + batch_size], "infer")[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)
