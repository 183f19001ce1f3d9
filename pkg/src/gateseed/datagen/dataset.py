"""Dataset directory format.

::

    <root>/manifest.json       generator config + seed + count
    <root>/annotations.jsonl   {"image": "images/000000.png", "gates": [...], "meta": {...}}
    <root>/images/NNNNNN.png
    <root>/summary.csv         x_bin, y_bin, d_bin, theta_bin, count
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Iterator

import numpy as np

from ..camera import CameraModel
from ..imagecore import read_image, write_image
from ..nn.labels import GateLabel, LabelError, validate_labels
from .render import GateSpec, RenderConfig, SceneSample, SpawnBounds, generate_scene

FORMAT_VERSION = 1
HIST_BINS = 10


class DatasetError(ValueError):
    pass


def worker_count() -> int:
    cap = os.environ.get("GATESEED_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise DatasetError(f"GATESEED_THREADS must be an integer, got {cap!r}") from None
    return n


def config_to_dict(cfg: RenderConfig) -> dict:
    d = asdict(cfg)
    d["camera"] = cfg.camera.to_dict()
    return d


def config_from_dict(d: dict) -> RenderConfig:
    d = dict(d)
    kw = {}
    if "camera" in d:
        kw["camera"] = CameraModel.from_dict(d.pop("camera"))
    if "gate" in d:
        kw["gate"] = GateSpec(**d.pop("gate"))
    if "bounds" in d:
        kw["bounds"] = SpawnBounds(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("bounds").items()})
    for k, v in d.items():
        kw[k] = tuple(v) if isinstance(v, list) else v
    return RenderConfig(**kw)


def scene_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Per-scene RNG stream; independent of worker scheduling."""
    return np.random.SeedSequence([int(seed), int(index)])


def _histogram_key(g: GateLabel, width: int, height: int, d_max: float) -> tuple[int, int, int, int]:
    xb = min(int(g.u / width * HIST_BINS), HIST_BINS - 1)
    yb = min(int(g.v / height * HIST_BINS), HIST_BINS - 1)
    db = min(int(g.d / d_max * HIST_BINS), HIST_BINS - 1)
    tb = min(max(int((g.theta + math.pi / 2) / math.pi * HIST_BINS), 0), HIST_BINS - 1)
    return xb, yb, db, tb


def summarize(labels_per_image, width: int, height: int, d_max: float) -> Counter:
    counts: Counter = Counter()
    for labels in labels_per_image:
        for g in labels:
            counts[_histogram_key(g, width, height, d_max)] += 1
    return counts


def write_summary(path: Path, counts: Counter) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x_bin", "y_bin", "d_bin", "theta_bin", "count"])
        for key in sorted(counts):
            wr.writerow([*key, counts[key]])


def generate_dataset(n: int, seed: int, out_dir: str | Path, cfg: RenderConfig | None = None,
                     workers: int | None = None) -> Path:
    """Render ``n`` scenes into ``out_dir``; output bytes depend only on (n, seed, cfg)."""
    if n < 1:
        raise DatasetError(f"dataset size must be >= 1, got {n}")
    cfg = cfg or RenderConfig()
    root = Path(out_dir)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    workers = workers or worker_count()

    def make(i: int) -> tuple[int, SceneSample]:
        sample = generate_scene(scene_seed(seed, i), cfg)
        path = root / "images" / f"{i:06d}.png"
        try:
            write_image(path, sample.image)
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc
        return i, sample

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(make, range(n)))
    else:
        results = [make(i) for i in range(n)]

    ann_path = root / "annotations.jsonl"
    with open(ann_path, "w") as fh:
        for i, sample in results:
            rec = {"image": f"images/{i:06d}.png", "gates": [g.to_dict() for g in sample.labels], "meta": sample.meta}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    cam = cfg.camera
    counts = summarize((s.labels for _, s in results), cam.width, cam.height, cfg.d_max)
    write_summary(root / "summary.csv", counts)
    manifest = {"format": FORMAT_VERSION, "n": n, "seed": seed, "config": config_to_dict(cfg)}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def read_manifest(path: str | Path) -> dict:
    mpath = Path(path) / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise DatasetError(f"{path}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{mpath}: invalid JSON ({exc})") from None
    if manifest.get("format") != FORMAT_VERSION:
        raise DatasetError(f"{mpath}: unsupported dataset format {manifest.get('format')!r}")
    return manifest


def _parse_line(line: str, lineno: int, ann_path: Path) -> dict:
    try:
        rec = json.loads(line)
        if not isinstance(rec, dict) or not isinstance(rec["image"], str) or not isinstance(rec["gates"], list):
            raise KeyError
        for g in rec["gates"]:
            for key in ("u", "v", "d", "theta"):
                float(g[key])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{ann_path}:{lineno}: malformed annotation line ({exc.__class__.__name__})") from None
    return rec


def load_dataset(path: str | Path) -> Iterator[SceneSample]:
    """Lazily yield samples; labels are validated against the image bounds."""
    root = Path(path)
    read_manifest(root)
    ann_path = root / "annotations.jsonl"
    with open(ann_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = _parse_line(line, lineno, ann_path)
            img_path = root / rec["image"]
            if not img_path.is_file():
                raise FileNotFoundError(f"{ann_path}:{lineno}: image file missing: {img_path}")
            image = read_image(img_path)
            labels = [GateLabel(float(g["u"]), float(g["v"]), float(g["d"]), float(g["theta"])) for g in rec["gates"]]
            try:
                validate_labels(labels, (image.shape[1], image.shape[0]))
            except LabelError as exc:
                raise DatasetError(f"{ann_path}:{lineno}: {exc}") from None
            yield SceneSample(image, labels, rec.get("meta", {}))


def dataset_size(path: str | Path) -> int:
    return int(read_manifest(path)["n"])
