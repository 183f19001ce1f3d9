"""Glue between images, filters and the network: input preparation,
dataset-to-array conversion and a small detector bundle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imagecore import apply_filter, ellipse
from .nn import D_MAX, NetworkParams, decode_predictions, encode_grid_labels, forward, predict


@dataclass(frozen=True)
class FilterSpec:
    kind: str = "pencil"
    ellipse_size: int = 5
    canny_low: float = 50.0
    canny_high: float = 150.0

    def apply(self, img: np.ndarray) -> np.ndarray:
        if self.kind == "pencil":
            return apply_filter("pencil", img, elem=ellipse(self.ellipse_size))
        if self.kind == "canny":
            return apply_filter("canny", img, low_thresh=self.canny_low, high_thresh=self.canny_high)
        return apply_filter(self.kind, img)


def prepare_input(img: np.ndarray, filt: FilterSpec) -> np.ndarray:
    """Filtered 1-channel image scaled to [0, 1] as float32."""
    return filt.apply(img).astype(np.float32) / 255.0


def build_arrays(samples, filt: FilterSpec, d_max: float = D_MAX, transform=None):
    """Stack samples into ``(inputs, targets, masks)``.

    ``transform`` optionally perturbs each raw image before filtering.
    """
    xs, ts, ms = [], [], []
    for s in samples:
        img = s.image if transform is None else transform(s.image)
        h, w = img.shape[:2]
        target, mask, _ = encode_grid_labels(s.labels, (w, h), d_max)
        xs.append(prepare_input(img, filt))
        ts.append(target)
        ms.append(mask)
    return np.stack(xs), np.stack(ts), np.stack(ms)


@dataclass
class Detector:
    name: str
    params: NetworkParams
    filter: FilterSpec = field(default_factory=FilterSpec)
    d_max: float = D_MAX

    def infer(self, img: np.ndarray) -> np.ndarray:
        """Grid prediction (R, C, F) for one raw image."""
        return forward(self.params, prepare_input(img, self.filter)[None], "infer")[0][0]

    def infer_batch(self, inputs: np.ndarray) -> np.ndarray:
        """Grid predictions for already-filtered inputs (N, H, W)."""
        return predict(self.params, inputs)

    def detect(self, img: np.ndarray, conf_thresh: float = 0.5):
        h, w = img.shape[:2]
        return decode_predictions(self.infer(img), conf_thresh, (w, h), self.d_max)
