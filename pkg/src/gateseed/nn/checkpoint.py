"""Versioned binary weight container.

Layout (little endian)::

    b"PCLN" | u32 version | 32-byte architecture digest
    | u32 arch-json length | arch json | u32 record count
    | records: u32 name length, name (utf-8), u32 ndim, ndim x u32 dims, f32 payload
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .network import Architecture, NetworkParams, init_params

MAGIC = b"PCLN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _tensors(params: NetworkParams):
    for k, v in params.weights.items():
        yield k, v
    for k, v in params.running.items():
        yield f"running.{k}", v


def save_checkpoint(path: str | Path, params: NetworkParams) -> None:
    arch_json = json.dumps(asdict(params.arch), sort_keys=True).encode()
    records = list(_tensors(params))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(params.arch.digest())
        fh.write(struct.pack("<I", len(arch_json)))
        fh.write(arch_json)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, expect: Architecture | None = None) -> NetworkParams:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = take(32)
    arch = Architecture.from_dict(json.loads(take(u32()).decode()))
    if arch.digest() != digest:
        raise CheckpointError(f"{path}: architecture digest mismatch")
    if expect is not None and expect.digest() != digest:
        raise CheckpointError(f"{path}: checkpoint architecture differs from the expected one")
    weights, running = {}, {}
    for _ in range(u32()):
        name = take(u32()).decode()
        ndim = u32()
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        if name.startswith("running."):
            running[name[len("running."):]] = arr
        else:
            weights[name] = arr
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last record")
    ref = init_params(arch)
    for have, want, kind in ((weights, ref.weights, "parameter"), (running, ref.running, "running statistic")):
        if set(have) != set(want):
            raise CheckpointError(f"{path}: {kind} names differ: {sorted(set(have) ^ set(want))}")
        for k, v in have.items():
            if v.shape != want[k].shape:
                raise CheckpointError(f"{path}: {k} has shape {v.shape}, expected {want[k].shape}")
    return NetworkParams(arch, weights, running)
